//! Central finite differences (evaluated in f64) against the single-precision
//! analytic backward passes, along random directions.

use latentseg::geometry::{build_transform_between, grid_center, sample_grid, AffineParams};
use latentseg::loss::{composite_loss_raw, composite_loss_with_grad};
use latentseg::nnops::{
    batch_norm, batch_norm_backward, conv2d, conv2d_backward, maxout, maxout_backward, prelu,
    prelu_backward, softmax_channels, softmax_channels_backward, BatchNormState, ConvKernel, Mode,
    PReLUState,
};
use latentseg::sampler::{bilinear_sample, bilinear_sample_backward};
use latentseg::tensor::{FeatureMap, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: usize = 100;
const TOL: f64 = 1e-3;
const H: f64 = 1e-6;

fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_shape(rng: &mut impl Rng) -> [usize; 4] {
    [
        rng.random_range(1..4),
        rng.random_range(1..4),
        rng.random_range(2..7),
        rng.random_range(2..7),
    ]
}

fn t64(shape: [usize; 4], v: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(shape, v.to_vec()).unwrap()
}

fn t32(shape: [usize; 4], v: &[f64]) -> Tensor4<f32> {
    Tensor4::from_vec(shape, v.iter().map(|&x| x as f32).collect()).unwrap()
}

fn dot32(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y).sum()
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], v: &[f64], s: f64) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| a + s * b).collect()
}

/// Directional derivative of `f` at `x` along `v` by central differences.
fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64], v: &[f64]) -> f64 {
    (f(&axpy(x, v, H)) - f(&axpy(x, v, -H))) / (2.0 * H)
}

struct Report {
    name: &'static str,
    checks: usize,
    worst: f64,
}

impl Report {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: 0,
            worst: 0.0,
        }
    }

    fn check(&mut self, what: &str, analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic - numeric).abs() / scale;
        assert!(
            rel <= TOL,
            "{} {what}: analytic {analytic} vs numeric {numeric} (rel {rel:.2e})",
            self.name
        );
        self.checks += 1;
        self.worst = self.worst.max(rel);
    }

    fn finish(self, cases: usize) {
        assert!(cases >= CASES);
        println!(
            "{}: {} cases, {} directional checks, worst relative error {:.2e}",
            self.name, cases, self.checks, self.worst
        );
    }
}

pub fn sampler_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rep = Report::new("bilinear sampler");
    for _ in 0..CASES {
        let shape = rand_shape(&mut rng);
        let [n, c, h, w] = shape;
        let (ho, wo) = (rng.random_range(2..7), rng.random_range(2..7));
        let params = AffineParams::new(
            rng.random_range(-3.2..3.2),
            [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            rng.random_range(0.5..2.0),
        )
        .unwrap();
        let m = build_transform_between(&params, grid_center(h, w), grid_center(ho, wo));
        let g64 = sample_grid(&m, ho, wo).unwrap();
        let g32 = sample_grid(&m.cast::<f32>(), ho, wo).unwrap();
        let x = rand_vec(&mut rng, n * c * h * w);
        let r = rand_vec(&mut rng, n * c * ho * wo);
        let v = rand_vec(&mut rng, x.len());
        let f = |x: &[f64]| {
            let y = bilinear_sample(
                &FeatureMap::new(t64(shape, x), 1.0).unwrap(),
                std::slice::from_ref(&g64),
            )
            .unwrap();
            dot64(y.data.data(), &r)
        };
        let u = FeatureMap::new(t32(shape, &x), 1.0).unwrap();
        let up = FeatureMap::new(t32([n, c, ho, wo], &r), 1.0).unwrap();
        let dx = bilinear_sample_backward(&u, &[g32], &up).unwrap();
        rep.check("dx", dot32(dx.data.data(), &v), fd(f, &x, &v));
    }
    rep.finish(CASES);
}

pub fn conv_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rep = Report::new("conv");
    for _ in 0..CASES {
        let shape = rand_shape(&mut rng);
        let [n, c, h, w] = shape;
        let co = rng.random_range(1..4);
        let k = if rng.random_bool(0.3) { 1 } else { 3 };
        let x = rand_vec(&mut rng, n * c * h * w);
        let wt = rand_vec(&mut rng, co * c * k * k);
        let b = rand_vec(&mut rng, co);
        let r = rand_vec(&mut rng, n * co * h * w);
        let loss = |x: &[f64], wt: &[f64], b: &[f64]| {
            let ker = ConvKernel::from_parts("k", c, co, k, wt.to_vec(), b.to_vec());
            dot64(conv2d(&t64(shape, x), &ker).unwrap().data(), &r)
        };
        let ker32 = ConvKernel::from_parts(
            "k",
            c,
            co,
            k,
            wt.iter().map(|&v| v as f32).collect(),
            b.iter().map(|&v| v as f32).collect(),
        );
        let (dx, dw, db) =
            conv2d_backward(&t32(shape, &x), &ker32, &t32([n, co, h, w], &r)).unwrap();
        let vx = rand_vec(&mut rng, x.len());
        rep.check(
            "dx",
            dot32(dx.data(), &vx),
            fd(|x| loss(x, &wt, &b), &x, &vx),
        );
        let vw = rand_vec(&mut rng, wt.len());
        rep.check("dw", dot32(&dw, &vw), fd(|p| loss(&x, p, &b), &wt, &vw));
        let vb = rand_vec(&mut rng, b.len());
        rep.check("db", dot32(&db, &vb), fd(|p| loss(&x, &wt, p), &b, &vb));
    }
    rep.finish(CASES);
}

pub fn batch_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rep = Report::new("batch norm");
    for case in 0..CASES {
        let shape = rand_shape(&mut rng);
        let [n, c, h, w] = shape;
        let mode = if case % 4 == 3 {
            Mode::Eval
        } else {
            Mode::Train
        };
        let x = rand_vec(&mut rng, n * c * h * w);
        let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta = rand_vec(&mut rng, c);
        let rm = rand_vec(&mut rng, c);
        let rv: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        let r = rand_vec(&mut rng, x.len());
        fn state<T: latentseg::Scalar>(
            g: &[f64],
            b: &[f64],
            rm: &[f64],
            rv: &[f64],
        ) -> BatchNormState<T> {
            let mut s = BatchNormState::new("bn", g.len());
            s.gamma.value = g.iter().map(|&v| T::lit(v)).collect();
            s.beta.value = b.iter().map(|&v| T::lit(v)).collect();
            s.running_mean.value = rm.iter().map(|&v| T::lit(v)).collect();
            s.running_var.value = rv.iter().map(|&v| T::lit(v)).collect();
            s
        }
        let loss = |x: &[f64], g: &[f64], b: &[f64]| {
            let (y, _) = batch_norm(&t64(shape, x), &state::<f64>(g, b, &rm, &rv), mode).unwrap();
            dot64(y.data(), &r)
        };
        let s32 = state::<f32>(&gamma, &beta, &rm, &rv);
        let (_, cache) = batch_norm(&t32(shape, &x), &s32, mode).unwrap();
        let (dx, dg, db) = batch_norm_backward(&s32, &cache, &t32(shape, &r)).unwrap();
        let vx = rand_vec(&mut rng, x.len());
        rep.check(
            "dx",
            dot32(dx.data(), &vx),
            fd(|x| loss(x, &gamma, &beta), &x, &vx),
        );
        let vg = rand_vec(&mut rng, c);
        rep.check(
            "dgamma",
            dot32(&dg, &vg),
            fd(|p| loss(&x, p, &beta), &gamma, &vg),
        );
        rep.check(
            "dbeta",
            dot32(&db, &vg),
            fd(|p| loss(&x, &gamma, p), &beta, &vg),
        );
    }
    rep.finish(CASES);
}

pub fn prelu_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rep = Report::new("prelu");
    for _ in 0..CASES {
        let shape = rand_shape(&mut rng);
        let c = shape[1];
        let x = rand_vec(&mut rng, shape.iter().product());
        let a: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..0.5)).collect();
        let r = rand_vec(&mut rng, x.len());
        let loss = |x: &[f64], a: &[f64]| {
            let mut s = PReLUState::<f64>::new("p", c);
            s.a.value = a.to_vec();
            dot64(prelu(&t64(shape, x), &s).unwrap().data(), &r)
        };
        let mut s32 = PReLUState::<f32>::new("p", c);
        s32.a.value = a.iter().map(|&v| v as f32).collect();
        let (dx, da) = prelu_backward(&t32(shape, &x), &s32, &t32(shape, &r)).unwrap();
        let vx = rand_vec(&mut rng, x.len());
        rep.check("dx", dot32(dx.data(), &vx), fd(|x| loss(x, &a), &x, &vx));
        let va = rand_vec(&mut rng, c);
        rep.check("da", dot32(&da, &va), fd(|p| loss(&x, p), &a, &va));
    }
    rep.finish(CASES);
}

pub fn maxout_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rep = Report::new("maxout");
    for _ in 0..CASES {
        let shape = rand_shape(&mut rng);
        let len: usize = shape.iter().product();
        let a = rand_vec(&mut rng, len);
        let b = rand_vec(&mut rng, len);
        let r = rand_vec(&mut rng, len);
        let loss = |a: &[f64], b: &[f64]| {
            dot64(maxout(&t64(shape, a), &t64(shape, b)).unwrap().data(), &r)
        };
        let (da, db) = maxout_backward(&t32(shape, &a), &t32(shape, &b), &t32(shape, &r)).unwrap();
        let va = rand_vec(&mut rng, len);
        rep.check("da", dot32(da.data(), &va), fd(|p| loss(p, &b), &a, &va));
        let vb = rand_vec(&mut rng, len);
        rep.check("db", dot32(db.data(), &vb), fd(|p| loss(&a, p), &b, &vb));
    }
    rep.finish(CASES);
}

pub fn softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rep = Report::new("softmax");
    for _ in 0..CASES {
        let mut shape = rand_shape(&mut rng);
        shape[1] = rng.random_range(2..6);
        let x: Vec<f64> = rand_vec(&mut rng, shape.iter().product())
            .iter()
            .map(|v| 3.0 * v)
            .collect();
        let r = rand_vec(&mut rng, x.len());
        let loss = |x: &[f64]| dot64(softmax_channels(&t64(shape, x)).unwrap().data(), &r);
        let y = softmax_channels(&t32(shape, &x)).unwrap();
        let dx = softmax_channels_backward(&y, &t32(shape, &r)).unwrap();
        let v = rand_vec(&mut rng, x.len());
        rep.check("dx", dot32(dx.data(), &v), fd(loss, &x, &v));
    }
    rep.finish(CASES);
}

pub fn composite_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rep = Report::new("composite loss");
    for _ in 0..CASES {
        let mut shape = rand_shape(&mut rng);
        shape[1] = rng.random_range(2..5);
        let [n, c, h, w] = shape;
        let logits = rand_vec(&mut rng, n * c * h * w);
        let probs = softmax_channels(&t64(shape, &logits)).unwrap();
        let p = probs.data().to_vec();
        let labels: Vec<u16> = (0..n * h * w)
            .map(|_| rng.random_range(0..c as u16))
            .collect();
        let weights: Vec<f64> = (0..n * h * w).map(|_| rng.random_range(0.0..3.0)).collect();
        let loss = |p: &[f64]| {
            composite_loss_raw(&t64(shape, p), &labels, &weights)
                .unwrap()
                .0
                .total
        };
        let w32: Vec<f32> = weights.iter().map(|&v| v as f32).collect();
        let (_, dp) = composite_loss_with_grad(&t32(shape, &p), &labels, &w32).unwrap();
        let v = rand_vec(&mut rng, p.len());
        rep.check("dp", dot32(dp.data(), &v), fd(loss, &p, &v));
    }
    rep.finish(CASES);
}

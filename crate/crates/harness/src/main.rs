use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latentseg::labels::LabelTable;
use latentseg::network::checkpoint;
use latentseg::phantom::{
    generate_split, materialize, read_volume, write_volume, Split, VolumeFile,
};
use latentseg::volume::Plane;
use latentseg_harness::ablate::ablate;
use latentseg_harness::data::load_split;
use latentseg_harness::eval::{evaluate, reference_cases, Case};
use latentseg_harness::infer::{infer_volume, ViewAggregationSpec};
use latentseg_harness::train::{checkpoint_path, train};
use latentseg_harness::{Arm, HarnessError, Result, RunConfig};

#[derive(Parser)]
#[command(
    name = "latentseg",
    version,
    about = "Train and evaluate latent-transform segmentation networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the phantom train/val/test splits and their manifest.
    PhantomGen(Common),
    /// Train one network per configured plane.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        plane: Option<Plane>,
        #[arg(long)]
        arm: Option<Arm>,
    },
    /// Segment volumes with trained plane networks and view aggregation.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Directory holding `<plane>.ckpt` files.
        #[arg(long)]
        checkpoints: PathBuf,
        /// Volumes to segment; the manifest's test split when omitted.
        #[arg(long)]
        input: Vec<PathBuf>,
        #[arg(long)]
        plane: Option<Plane>,
    },
    /// Score `<id>_pred.vol` files against the manifest's test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Train and compare the four augmentation arms.
    Ablate(Common),
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build_global()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(cfg)
}

fn pred_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_pred.vol"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::PhantomGen(c) => {
            let cfg = load_config(&c)?;
            let d = &cfg.data;
            let manifest = generate_split(
                d.counts(),
                &d.pose,
                &d.res_set,
                &d.modalities,
                d.fov_mm,
                cfg.seed,
            )?;
            materialize(&manifest, &c.out)?;
            println!(
                "wrote {} volumes to {}",
                manifest.entries.len(),
                c.out.display()
            );
        }
        Cmd::Train { common, plane, arm } => {
            let mut cfg = load_config(&common)?;
            if let Some(p) = plane {
                cfg.planes = vec![p];
            }
            if let Some(a) = arm {
                cfg.arm = a;
            }
            for r in train(&cfg, &common.out)? {
                println!(
                    "{}: best epoch {} val dsc {:.3} -> {}",
                    r.plane,
                    r.best_epoch,
                    r.best_val_dsc,
                    r.checkpoint.display()
                );
            }
        }
        Cmd::Infer {
            common,
            checkpoints,
            input,
            plane,
        } => {
            let cfg = load_config(&common)?;
            let table = LabelTable::phantom_default();
            let spec = ViewAggregationSpec::new(&cfg.aggregation, &table)?;
            let planes = plane.map_or_else(|| cfg.planes.clone(), |p| vec![p]);
            let nets = planes
                .iter()
                .map(|&p| checkpoint::load::<f32>(&checkpoint_path(&checkpoints, p)))
                .collect::<latentseg::Result<Vec<_>>>()?;
            let refs: Vec<_> = nets.iter().collect();
            let jobs: Vec<(String, latentseg::volume::IntensityVolume, VolumeFile)> = if input
                .is_empty()
            {
                load_split(&cfg.manifest, Split::Test)?
                    .into_iter()
                    .map(|s| {
                        let f =
                            VolumeFile::from_labels(&s.labels, s.entry.scene_seed, s.entry.pose);
                        (s.entry.id, s.image, f)
                    })
                    .collect()
            } else {
                input
                    .iter()
                    .map(|p| {
                        let f = read_volume(p)?;
                        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("volume");
                        let id = stem.strip_suffix("_image").unwrap_or(stem).to_string();
                        let img = f.clone().into_intensity()?;
                        Ok((id, img, f))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            std::fs::create_dir_all(&common.out)?;
            for (id, img, meta) in jobs {
                let res = infer_volume(&refs, &img, &spec, cfg.network.context)?;
                let f = VolumeFile::from_labels(
                    &res.aggregated,
                    meta.header.scene_seed,
                    meta.header.pose,
                );
                write_volume(&pred_path(&common.out, &id), &f)?;
            }
            println!("predictions written to {}", common.out.display());
        }
        Cmd::Eval { common, pred } => {
            let cfg = load_config(&common)?;
            let table = LabelTable::phantom_default();
            let test = load_split(&cfg.manifest, Split::Test)?;
            let preds = test
                .iter()
                .map(|s| {
                    let v = read_volume(&pred_path(&pred, &s.entry.id))?.into_labels()?;
                    Ok(Case {
                        subject: s.entry.id.clone(),
                        res: s.entry.res,
                        volume: v,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let name = pred
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or("prediction");
            let report = evaluate(name, &preds, &reference_cases(&test), None, &table)?;
            std::fs::create_dir_all(&common.out)?;
            report.save(&common.out.join("report.tsv"))?;
            for g in report.group_means() {
                println!(
                    "{:<12} dsc {:.2}  asd {}",
                    g.class.name(),
                    g.dsc,
                    g.asd.map_or("NA".into(), |a| format!("{a:.3}"))
                );
            }
            println!("mean dsc {:.2}", report.mean_dsc());
        }
        Cmd::Ablate(c) => {
            let cfg = load_config(&c)?;
            let rep = ablate(&cfg, &c.out, |m| eprintln!("{m}"))?;
            for a in &rep.arms {
                println!("{:<10} mean dsc {:.2}", a.spec.name, a.report.mean_dsc());
            }
            for p in &rep.pairwise {
                println!(
                    "{} vs {}: diff {:+.2} p_adj {:?}",
                    p.a, p.b, p.mean_diff, p.p_adj
                );
            }
            println!("total {:.0} s", rep.seconds);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! Label tables, the lateralisation-free sagittal scheme, and label
//! harmonisation (merge / remove / mask).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TissueClass {
    Background,
    Csf,
    Cortex,
    Wm,
    Subcortical,
}

impl TissueClass {
    pub fn name(self) -> &'static str {
        match self {
            TissueClass::Background => "background",
            TissueClass::Csf => "csf",
            TissueClass::Cortex => "cortex",
            TissueClass::Wm => "wm",
            TissueClass::Subcortical => "subcortical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: u16,
    pub name: String,
    pub hemisphere: Hemisphere,
    pub class: TissueClass,
}

/// Contiguous label ids `0..n` (0 is background) plus the many-to-one map
/// onto the non-lateralised sagittal scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    entries: Vec<LabelEntry>,
    sagittal_map: Vec<u16>,
    sagittal_entries: Vec<LabelEntry>,
}

impl LabelTable {
    /// `sagittal_map[id]` is the sagittal id of full id `id`; the sagittal ids
    /// must cover `0..m` and each merged entry takes the name and class of its
    /// first member, with no hemisphere.
    pub fn new(entries: Vec<LabelEntry>, sagittal_map: Vec<u16>) -> Result<Self> {
        if entries.is_empty() {
            return invalid("empty label table");
        }
        for (k, e) in entries.iter().enumerate() {
            if e.id as usize != k {
                return invalid(format!(
                    "label ids must be contiguous from 0, found {} at position {}",
                    e.id, k
                ));
            }
        }
        if entries[0].class != TissueClass::Background {
            return invalid("label 0 must be background");
        }
        for e in &entries {
            let partner = |h: Hemisphere| {
                entries
                    .iter()
                    .any(|o| o.hemisphere == h && o.class == e.class && o.id != e.id)
            };
            let ok = match e.hemisphere {
                Hemisphere::Left => partner(Hemisphere::Right),
                Hemisphere::Right => partner(Hemisphere::Left),
                Hemisphere::None => true,
            };
            if !ok {
                return invalid(format!("label '{}' has no mirror partner", e.name));
            }
        }
        if sagittal_map.len() != entries.len() {
            return invalid("sagittal map must cover every label");
        }
        let m = sagittal_map.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut sagittal_entries: Vec<Option<LabelEntry>> = vec![None; m];
        for (id, &s) in sagittal_map.iter().enumerate() {
            let e = &entries[id];
            match &sagittal_entries[s as usize] {
                None => {
                    let name = e
                        .name
                        .trim_end_matches("_left")
                        .trim_end_matches("_right")
                        .to_string();
                    sagittal_entries[s as usize] = Some(LabelEntry {
                        id: s,
                        name,
                        hemisphere: Hemisphere::None,
                        class: e.class,
                    })
                }
                Some(prev) if prev.class != e.class => {
                    return invalid(format!(
                        "sagittal id {s} merges labels of different classes"
                    ));
                }
                Some(_) => {}
            }
        }
        let sagittal_entries = sagittal_entries
            .into_iter()
            .enumerate()
            .map(|(s, e)| {
                e.ok_or_else(|| {
                    crate::Error::InvalidArgument(format!("sagittal id {s} has no member"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if sagittal_map[0] != 0 {
            return invalid("background must map to sagittal background");
        }
        Ok(Self {
            entries,
            sagittal_map,
            sagittal_entries,
        })
    }

    /// The desk-scale lateralised scheme: background, CSF, and left/right
    /// cortex, white matter and two subcortical nuclei.
    pub fn phantom_default() -> Self {
        use Hemisphere::*;
        use TissueClass::*;
        let spec: [(&str, Hemisphere, TissueClass, u16); 10] = [
            ("background", None, Background, 0),
            ("csf", None, Csf, 1),
            ("cortex_left", Left, Cortex, 2),
            ("cortex_right", Right, Cortex, 2),
            ("wm_left", Left, Wm, 3),
            ("wm_right", Right, Wm, 3),
            ("nucleus_a_left", Left, Subcortical, 4),
            ("nucleus_a_right", Right, Subcortical, 4),
            ("nucleus_b_left", Left, Subcortical, 5),
            ("nucleus_b_right", Right, Subcortical, 5),
        ];
        let entries = spec
            .iter()
            .enumerate()
            .map(|(k, &(name, hemisphere, class, _))| LabelEntry {
                id: k as u16,
                name: name.into(),
                hemisphere,
                class,
            })
            .collect();
        let map = spec.iter().map(|s| s.3).collect();
        Self::new(entries, map).expect("default label table is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn get(&self, id: u16) -> Option<&LabelEntry> {
        self.entries.get(id as usize)
    }

    pub fn class_of(&self, id: u16) -> Result<TissueClass> {
        match self.get(id) {
            Some(e) => Ok(e.class),
            None => invalid(format!("unknown label id {id}")),
        }
    }

    pub fn sagittal_len(&self) -> usize {
        self.sagittal_entries.len()
    }

    pub fn sagittal(&self, id: u16) -> Result<u16> {
        match self.sagittal_map.get(id as usize) {
            Some(&s) => Ok(s),
            None => invalid(format!("unknown label id {id}")),
        }
    }

    /// Merged sagittal id → full ids that share it.
    pub fn sagittal_unmap(&self) -> Vec<Vec<u16>> {
        let mut out = vec![Vec::new(); self.sagittal_len()];
        for (id, &s) in self.sagittal_map.iter().enumerate() {
            out[s as usize].push(id as u16);
        }
        out
    }

    /// The sagittal scheme as a table of its own (no hemispheres, identity map).
    pub fn sagittal_table(&self) -> LabelTable {
        let n = self.sagittal_entries.len();
        LabelTable::new(self.sagittal_entries.clone(), (0..n as u16).collect())
            .expect("sagittal scheme is valid")
    }

    /// Foreground structures grouped by tissue class, in class order.
    pub fn groups(&self) -> BTreeMap<TissueClass, Vec<u16>> {
        let mut out: BTreeMap<TissueClass, Vec<u16>> = BTreeMap::new();
        for e in &self.entries {
            if e.class != TissueClass::Background {
                out.entry(e.class).or_default().push(e.id);
            }
        }
        out
    }
}

/// Protocol-mapping rules applied before comparing segmentations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HarmonizationMap {
    /// Each source id set collapses onto its target id.
    pub merges: Vec<(Vec<u16>, u16)>,
    /// Ids sent to background.
    pub removals: Vec<u16>,
    /// Voxels whose reference label is one of these ids become background.
    pub masks: Vec<u16>,
    /// Ids passed through unchanged; background is always passed through.
    pub keep: Vec<u16>,
}

impl HarmonizationMap {
    pub fn identity(ids: impl IntoIterator<Item = u16>) -> Self {
        Self {
            keep: ids.into_iter().collect(),
            ..Default::default()
        }
    }

    fn lookup(&self) -> Result<BTreeMap<u16, u16>> {
        let mut map = BTreeMap::new();
        let claim = |src: u16, dst: u16, map: &mut BTreeMap<u16, u16>| {
            if map.insert(src, dst).is_some_and(|old| old != dst) {
                return invalid(format!(
                    "label {src} appears in more than one harmonisation rule"
                ));
            }
            Ok(())
        };
        let mut sources = BTreeSet::new();
        for (srcs, dst) in &self.merges {
            for &s in srcs {
                if !sources.insert(s) {
                    return invalid(format!(
                        "label {s} appears in more than one harmonisation rule"
                    ));
                }
                claim(s, *dst, &mut map)?;
            }
        }
        for &r in &self.removals {
            if !sources.insert(r) {
                return invalid(format!(
                    "label {r} appears in more than one harmonisation rule"
                ));
            }
            claim(r, 0, &mut map)?;
        }
        let targets: Vec<u16> = self.merges.iter().map(|m| m.1).collect();
        for &t in &targets {
            if self.removals.contains(&t) {
                return invalid(format!("merge target {t} is also removed"));
            }
            if map.get(&t).is_some_and(|&d| d != t) {
                return invalid(format!("merge target {t} is itself remapped"));
            }
            map.insert(t, t);
        }
        for &k in self.keep.iter().chain(std::iter::once(&0)) {
            if map.get(&k).is_some_and(|&d| d != k) {
                return invalid(format!("label {k} is both kept and remapped"));
            }
            map.insert(k, k);
        }
        Ok(map)
    }
}

/// Applies `map` to every voxel; `reference` (same grid) drives the masks.
pub fn harmonize(
    labels: &LabelVolume,
    map: &HarmonizationMap,
    reference: Option<&LabelVolume>,
) -> Result<LabelVolume> {
    let lut = map.lookup()?;
    if !map.masks.is_empty() {
        match reference {
            Some(r) if r.same_grid(labels) => {}
            Some(_) => return invalid("harmonisation reference is on a different grid"),
            None => return invalid("mask rules need a reference volume"),
        }
    }
    let mut out = labels.clone();
    for (k, v) in out.data.iter_mut().enumerate() {
        *v = match lut.get(v) {
            Some(&d) => d,
            None => {
                return invalid(format!(
                    "label {} is not covered by the harmonisation map",
                    v
                ))
            }
        };
        if let Some(r) = reference {
            if map.masks.contains(&r.data[k]) {
                *v = 0;
            }
        }
    }
    Ok(out)
}

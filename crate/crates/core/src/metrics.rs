//! Transfer metrics (PMD, ELS, part accuracy) and manifest-level evaluation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::mesh::{edges, Mesh};
use crate::pose::{transfer_pose, PoseNet};
use crate::seed;
use crate::shape::{fit_shape_code, segment_mesh, FitConfig, ShapeCode, ShapeDecoder};
use crate::synth::dataset::{load_asset, load_labels, read_jsonl, TestRecord, TEST_MANIFEST_FILE};
use crate::ttt::{run_ttt, DrivingSource, TttConfig, TttSubject};

pub const SCHEMA_VERSION: u32 = 1;

fn check_topology(pred: &Mesh, truth: &Mesh) -> Result<()> {
    check_dims("vertex count", truth.vertex_count(), pred.vertex_count())?;
    if pred.faces != truth.faces {
        return Err(Error::Invalid("prediction and truth have different faces".into()));
    }
    Ok(())
}

/// Mean per-vertex distance times 100. Both meshes are expected in the 1 m normalized
/// frame, so the value reads as centimeters.
pub fn pmd(pred: &Mesh, truth: &Mesh) -> Result<f64> {
    check_topology(pred, truth)?;
    if truth.vertices.is_empty() {
        return Err(Error::Invalid("pmd of an empty mesh".into()));
    }
    let sum: f64 = pred.vertices.iter().zip(&truth.vertices).map(|(a, b)| (a - b).norm()).sum();
    Ok(100.0 * sum / truth.vertex_count() as f64)
}

/// Edge length score: mean over truth edges of `1 - |l_pred / l_truth - 1|`.
/// Zero-length truth edges are skipped.
pub fn els(pred: &Mesh, truth: &Mesh) -> Result<f64> {
    check_topology(pred, truth)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut skipped = 0usize;
    for (i, j) in edges(truth).edges {
        let l = (truth.vertices[i] - truth.vertices[j]).norm();
        if l == 0.0 {
            skipped += 1;
            continue;
        }
        let lp = (pred.vertices[i] - pred.vertices[j]).norm();
        sum += 1.0 - (lp / l - 1.0).abs();
        count += 1;
    }
    if skipped > 0 {
        log::warn!("els: skipped {skipped} zero-length truth edges");
    }
    if count == 0 {
        return Err(Error::Degenerate("els: truth mesh has no edge of positive length".into()));
    }
    Ok(sum / count as f64)
}

pub fn part_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_dims("part labels", truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::Invalid("part accuracy of an empty labeling".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub character_id: String,
    pub pose_id: usize,
    pub pmd: f64,
    pub els: f64,
    pub part_accuracy: Option<f64>,
    /// Test-time training was requested but diverged; metrics are for the untuned net.
    #[serde(default)]
    pub ttt_diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean_pmd: f64,
    pub mean_els: f64,
    pub mean_part_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub records: Vec<EvalRecord>,
    /// `None` for an empty report.
    pub aggregate: Option<Aggregate>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn new(records: Vec<EvalRecord>) -> Self {
        let aggregate = (!records.is_empty()).then(|| Aggregate {
            count: records.len(),
            mean_pmd: mean(records.iter().map(|r| r.pmd)).unwrap_or_default(),
            mean_els: mean(records.iter().map(|r| r.els)).unwrap_or_default(),
            mean_part_accuracy: mean(records.iter().filter_map(|r| r.part_accuracy)),
        });
        Self {
            schema_version: SCHEMA_VERSION,
            records,
            aggregate,
        }
    }

    /// One JSON object per record, then `{"schema_version":..,"aggregate":..}`.
    pub fn to_jsonl(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Line<'a> {
            schema_version: u32,
            #[serde(flatten)]
            record: &'a EvalRecord,
        }
        #[derive(Serialize)]
        struct Tail<'a> {
            schema_version: u32,
            aggregate: &'a Option<Aggregate>,
        }
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(&Line {
                schema_version: self.schema_version,
                record: r,
            })?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&Tail {
            schema_version: self.schema_version,
            aggregate: &self.aggregate,
        })?);
        out.push('\n');
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Tail {
            schema_version: u32,
            aggregate: Option<Aggregate>,
        }
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let (last, body) = lines
            .split_last()
            .ok_or_else(|| Error::Invalid("empty report".into()))?;
        let tail: Tail = serde_json::from_str(last)?;
        if tail.schema_version != SCHEMA_VERSION {
            return Err(Error::Invalid(format!("unsupported report schema {}", tail.schema_version)));
        }
        let records = body
            .iter()
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<Vec<EvalRecord>>>()?;
        Ok(Self {
            schema_version: tail.schema_version,
            records,
            aggregate: tail.aggregate,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("character_id,pose_id,pmd,els,part_acc\n");
        for r in &self.records {
            let acc = r.part_accuracy.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", r.character_id, r.pose_id, r.pmd, r.els, acc));
        }
        out
    }

    pub fn save(&self, path: &Path, csv: Option<&Path>) -> Result<()> {
        let write = |p: &Path, text: String| -> Result<()> {
            let mut f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
            f.write_all(text.as_bytes()).map_err(|e| Error::io(p, e))
        };
        write(path, self.to_jsonl()?)?;
        if let Some(c) = csv {
            write(c, self.to_csv())?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub fit: FitConfig,
    pub ttt_surface_samples: usize,
    /// Worker threads for item-level parallelism; output order is unaffected.
    pub jobs: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            ttt_surface_samples: TttConfig::default().surface_samples,
            jobs: 1,
            seed: 0,
        }
    }
}

struct PreparedCharacter {
    subject: TttSubject,
    part_accuracy: Option<f64>,
}

struct PreparedItem {
    record: TestRecord,
    character: usize,
    source: DrivingSource,
    target: Mesh,
}

/// Test items with fitted shape codes, ready to be scored under different pose nets or
/// TTT settings without refitting.
pub struct PreparedEval {
    characters: Vec<PreparedCharacter>,
    items: Vec<PreparedItem>,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

impl PreparedEval {
    /// Loads `test_manifest.jsonl` from `dir`, fits a shape code to every stylized test
    /// character and segments it. Source characters take their code from `codes` by
    /// id and are fitted when absent.
    pub fn load(
        dir: &Path,
        decoder: &ShapeDecoder,
        codes: &[(String, ShapeCode)],
        opts: &EvalOptions,
    ) -> Result<Self> {
        let records: Vec<TestRecord> = read_jsonl(&dir.join(TEST_MANIFEST_FILE))?;
        let known: BTreeMap<&str, &ShapeCode> = codes.iter().map(|(k, v)| (k.as_str(), v)).collect();

        let mut character_ids: Vec<&str> = Vec::new();
        let mut source_ids: Vec<(&str, &str)> = Vec::new();
        for r in &records {
            if !character_ids.contains(&r.character_id.as_str()) {
                character_ids.push(&r.character_id);
            }
            if !known.contains_key(r.source_id.as_str()) && !source_ids.iter().any(|s| s.0 == r.source_id) {
                source_ids.push((&r.source_id, &r.source_obj_path));
            }
        }
        let fit = |id: &str, mesh: &Mesh| -> Result<ShapeCode> {
            let cfg = FitConfig {
                seed: seed::derive(seed::derive(opts.seed, "fit"), id),
                ..opts.fit.clone()
            };
            Ok(fit_shape_code(mesh, decoder, &cfg, None)?.code)
        };
        let workers = pool(opts.jobs)?;

        let characters: Vec<PreparedCharacter> = workers.install(|| {
            character_ids
                .par_iter()
                .map(|&id| {
                    let r = records.iter().find(|r| r.character_id == id).expect("id from records");
                    let mesh = load_asset(dir, id, &r.obj_path)?;
                    let code = fit(id, &mesh)?;
                    let labels_path = dir.join(&r.labels_path);
                    let part_accuracy = if labels_path.exists() {
                        let truth = load_labels(&labels_path)?;
                        Some(part_accuracy(&segment_mesh(&mesh, &code, decoder)?, &truth)?)
                    } else {
                        None
                    };
                    let s = seed::derive(seed::derive(opts.seed, "ttt-surface"), id);
                    let subject = TttSubject::prepare(mesh, code, decoder, opts.ttt_surface_samples, s)?;
                    Ok(PreparedCharacter {
                        subject,
                        part_accuracy,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let fitted_sources: BTreeMap<&str, ShapeCode> = workers.install(|| {
            source_ids
                .par_iter()
                .map(|&(id, path)| Ok((id, fit(id, &load_asset(dir, id, path)?)?)))
                .collect::<Result<BTreeMap<_, _>>>()
        })?;

        let mut items = Vec::with_capacity(records.len());
        for record in records.iter().cloned() {
            let character = character_ids.iter().position(|c| *c == record.character_id).expect("listed");
            let rest = load_asset(dir, &record.source_id, &record.source_obj_path)?;
            let posed = load_asset(dir, &record.source_id, &record.source_target_obj_path)?;
            let code = match known.get(record.source_id.as_str()) {
                Some(c) => (*c).clone(),
                None => fitted_sources[record.source_id.as_str()].clone(),
            };
            let source = DrivingSource::from_meshes(&rest, &posed, code)?;
            let target = load_asset(dir, &record.character_id, &record.target_obj_path)?;
            items.push(PreparedItem {
                record,
                character,
                source,
                target,
            });
        }
        Ok(Self { characters, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Part accuracy of each distinct test character, in manifest order.
    pub fn part_accuracies(&self) -> Vec<Option<f64>> {
        self.characters.iter().map(|c| c.part_accuracy).collect()
    }

    /// Transfers every item with `net`, fine-tuning a private copy per item when `ttt`
    /// is given.
    pub fn run(&self, net: &PoseNet, ttt: Option<&TttConfig>, jobs: usize) -> Result<EvalReport> {
        let records = pool(jobs)?.install(|| {
            self.items
                .par_iter()
                .enumerate()
                .map(|(i, item)| {
                    let ch = &self.characters[item.character];
                    let m = &item.record.pose_code;
                    let (pred, diverged) = match ttt {
                        Some(cfg) => {
                            let cfg = TttConfig {
                                seed: seed::derive_indexed(cfg.seed, "item", i as u64),
                                ..cfg.clone()
                            };
                            let out = run_ttt(&ch.subject, &item.source, m, net, &cfg)?;
                            (out.mesh, out.diverged)
                        }
                        None => (transfer_pose(&ch.subject.mesh, &ch.subject.code, m, net)?, false),
                    };
                    Ok(EvalRecord {
                        character_id: item.record.character_id.clone(),
                        pose_id: item.record.pose_id,
                        pmd: pmd(&pred, &item.target)?,
                        els: els(&pred, &item.target)?,
                        part_accuracy: ch.part_accuracy,
                        ttt_diverged: diverged,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(EvalReport::new(records))
    }
}

/// Fits, transfers and scores every item of the test manifest in `dir`.
pub fn evaluate(
    dir: &Path,
    decoder: &ShapeDecoder,
    codes: &[(String, ShapeCode)],
    net: &PoseNet,
    ttt: Option<&TttConfig>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    PreparedEval::load(dir, decoder, codes, opts)?.run(net, ttt, opts.jobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::icosphere;
    use crate::Vec3;

    #[test]
    fn closed_forms() {
        let m = icosphere(1);
        assert_eq!(pmd(&m, &m).unwrap(), 0.0);
        assert_eq!(els(&m, &m).unwrap(), 1.0);
        let double = m.with_vertices(m.vertices.iter().map(|v| v * 2.0).collect()).unwrap();
        assert!(els(&double, &m).unwrap().abs() < 1e-12);
        let half = m.with_vertices(m.vertices.iter().map(|v| v * 0.5).collect()).unwrap();
        assert!((els(&half, &m).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(part_accuracy(&[1, 2, 3, 4], &[1, 0, 3, 0]).unwrap(), 0.5);
    }

    #[test]
    fn topology_mismatch() {
        let a = icosphere(0);
        let b = icosphere(1);
        assert!(pmd(&a, &b).is_err());
        assert!(els(&a, &b).is_err());
        let mut c = a.clone();
        c.faces[0].swap(1, 2);
        assert!(pmd(&c, &a).is_err());
        assert!(part_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn degenerate_truth_edge_is_skipped() {
        let truth = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x()], vec![[0, 1, 2]]).unwrap();
        let pred = truth.with_vertices(vec![Vec3::zeros(), Vec3::x() * 1.5, Vec3::x() * 1.5]).unwrap();
        // two edges of ratio 1.5, one zero-length edge excluded
        assert!((els(&pred, &truth).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_report() {
        let r = EvalReport::new(Vec::new());
        assert!(r.aggregate.is_none());
        let text = r.to_jsonl().unwrap();
        assert!(!text.contains("NaN") && !text.contains("null,") );
        assert_eq!(EvalReport::from_jsonl(&text).unwrap(), r);
        assert_eq!(r.to_csv(), "character_id,pose_id,pmd,els,part_acc\n");
    }

    #[test]
    fn report_round_trip() {
        let recs = vec![
            EvalRecord {
                character_id: "a".into(),
                pose_id: 0,
                pmd: 1.5,
                els: 0.9,
                part_accuracy: Some(0.8),
                ttt_diverged: false,
            },
            EvalRecord {
                character_id: "b".into(),
                pose_id: 3,
                pmd: 2.5,
                els: 0.7,
                part_accuracy: None,
                ttt_diverged: true,
            },
        ];
        let r = EvalReport::new(recs);
        let agg = r.aggregate.clone().unwrap();
        assert_eq!(agg.count, 2);
        assert!((agg.mean_pmd - 2.0).abs() < 1e-15);
        assert!((agg.mean_els - 0.8).abs() < 1e-15);
        assert_eq!(agg.mean_part_accuracy, Some(0.8));
        assert_eq!(EvalReport::from_jsonl(&r.to_jsonl().unwrap()).unwrap(), r);
        assert!(r.to_csv().ends_with("b,3,2.5,0.7,\n"));
    }
}

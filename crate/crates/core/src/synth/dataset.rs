//! Dataset assembly: base characters, stylized variants, train/test poses, the pose
//! latent space, ground-truth offsets and the on-disk layout.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::character::{build_character, stylize, BodyParams, SkinnedCharacter, StyleParams};
use super::lbs::{forward_kinematics, lbs_deform, skin_mesh, PoseSample};
use super::pose_space::{fit_pose_space, sample_pose, PoseSpace, POSE_DIM};
use crate::error::{check_dims, Error, Result};
use crate::mesh::{load_obj, save_obj, Mesh, Vec3};
use crate::nn::{Checkpoint, Tensor};
use crate::seed;
use crate::shape::ShapeTrainItem;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub characters: usize,
    pub poses: usize,
    /// Poses used only to fit the pose latent space.
    pub prior_poses: usize,
    pub pose_dim: usize,
    /// Unlabeled stylized variants per base character added to shape training.
    pub stylized_train: usize,
    pub test_characters: usize,
    pub test_poses: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            characters: 4,
            poses: 200,
            prior_poses: 2000,
            pose_dim: POSE_DIM,
            stylized_train: 1,
            test_characters: 2,
            test_poses: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharacterKind {
    Base,
    StylizedTrain,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterEntry {
    pub id: String,
    pub kind: CharacterKind,
    /// Index of the base character a stylized variant was derived from.
    pub base: Option<usize>,
    pub params: BodyParams,
    pub style: Option<StyleParams>,
    pub character: SkinnedCharacter,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    /// Base characters first, then stylized training variants, then test variants.
    pub characters: Vec<CharacterEntry>,
    pub train_poses: Vec<PoseSample>,
    pub train_codes: Vec<Vec<f64>>,
    pub test_poses: Vec<PoseSample>,
    pub test_codes: Vec<Vec<f64>>,
    pub pose_space: PoseSpace,
}

/// Characters, poses and the pose space. Train pose 0 is always the rest pose.
pub fn gen_dataset(config: &DatasetConfig) -> Result<Dataset> {
    if config.characters == 0 || config.poses == 0 {
        return Err(Error::Invalid("need at least one character and one pose".into()));
    }
    let root = config.seed;
    let mut characters = Vec::new();
    let mut base = Vec::new();
    for i in 0..config.characters {
        let mut rng = seed::rng(seed::derive_indexed(root, "character", i as u64));
        let params = BodyParams::sample(&mut rng);
        let character = build_character(&params)?;
        base.push((params, character.clone()));
        characters.push(CharacterEntry {
            id: format!("base{i:02}"),
            kind: CharacterKind::Base,
            base: None,
            params,
            style: None,
            character,
        });
    }
    let variant = |kind: CharacterKind, k: usize, b: usize, style: StyleParams| -> Result<CharacterEntry> {
        let (params, source) = &base[b];
        let prefix = if kind == CharacterKind::Test { "test" } else { "sty" };
        Ok(CharacterEntry {
            id: format!("{prefix}{k:02}"),
            kind,
            base: Some(b),
            params: *params,
            style: Some(style),
            character: stylize(source, &style)?.normalized()?,
        })
    };
    let mut k = 0;
    for _ in 0..config.stylized_train {
        for b in 0..config.characters {
            let mut rng = seed::rng(seed::derive_indexed(root, "train-style", k as u64));
            let style = StyleParams::sample(&mut rng);
            characters.push(variant(CharacterKind::StylizedTrain, k, b, style)?);
            k += 1;
        }
    }
    for t in 0..config.test_characters {
        let mut rng = seed::rng(seed::derive_indexed(root, "test-style", t as u64));
        let mut style = StyleParams::sample(&mut rng);
        style.hat = t % 2 == 0;
        characters.push(variant(CharacterKind::Test, t, t % config.characters, style)?);
    }

    let bones = characters[0].character.bone_count();
    let mut rng = seed::rng(seed::derive(root, "train-poses"));
    let mut train_poses = vec![PoseSample::identity(bones)];
    train_poses.extend((1..config.poses).map(|_| sample_pose(&mut rng)));
    let mut rng = seed::rng(seed::derive(root, "test-poses"));
    let test_poses: Vec<PoseSample> = (0..config.test_poses).map(|_| sample_pose(&mut rng)).collect();
    let mut rng = seed::rng(seed::derive(root, "pose-prior"));
    let prior: Vec<PoseSample> = (0..config.prior_poses).map(|_| sample_pose(&mut rng)).collect();
    let pose_space = fit_pose_space(&prior, config.pose_dim)?;
    let train_codes = train_poses
        .iter()
        .map(|p| pose_space.encode(p))
        .collect::<Result<_>>()?;
    let test_codes = test_poses
        .iter()
        .map(|p| pose_space.encode(p))
        .collect::<Result<_>>()?;

    Ok(Dataset {
        config: config.clone(),
        characters,
        train_poses,
        train_codes,
        test_poses,
        test_codes,
        pose_space,
    })
}

impl Dataset {
    pub fn indices(&self, kind: CharacterKind) -> Vec<usize> {
        (0..self.characters.len())
            .filter(|&i| self.characters[i].kind == kind)
            .collect()
    }

    /// Ground truth for every (base character, train pose) pair. Rest index `i` is
    /// base character `i`.
    pub fn pose_training_set(&self) -> Result<PoseTrainingSet> {
        let bases = self.indices(CharacterKind::Base);
        let mut set = PoseTrainingSet {
            rest: bases.iter().map(|&i| self.characters[i].character.mesh.clone()).collect(),
            pairs: Vec::new(),
        };
        for (ci, &i) in bases.iter().enumerate() {
            let c = &self.characters[i].character;
            for (pi, pose) in self.train_poses.iter().enumerate() {
                let target = skin_mesh(&c.mesh, &c.weights, &forward_kinematics(&c.rig, pose)?)?;
                set.pairs.push(PosePair {
                    character: ci,
                    pose_id: pi,
                    code: self.train_codes[pi].clone(),
                    target: target.vertices,
                });
            }
        }
        Ok(set)
    }

    /// Ground-truth posed mesh of character `index` under test pose `pose`.
    pub fn test_target(&self, index: usize, pose: usize) -> Result<Mesh> {
        lbs_deform(&self.characters[index].character, &self.test_poses[pose])
    }

    /// Largest ground-truth offset over all base characters and train poses.
    pub fn max_offset(&self) -> Result<f64> {
        let set = self.pose_training_set()?;
        Ok(set
            .pairs
            .iter()
            .flat_map(|p| {
                p.target
                    .iter()
                    .zip(&set.rest[p.character].vertices)
                    .map(|(t, v)| (t - v).norm())
            })
            .fold(0.0, f64::max))
    }
}

/// One supervision pair for the pose network.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformSample {
    pub x: Vec3,
    pub dx: Vec3,
    pub shape_index: usize,
    pub pose: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosePair {
    pub character: usize,
    pub pose_id: usize,
    pub code: Vec<f64>,
    pub target: Vec<Vec3>,
}

/// Rest meshes and their posed ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrainingSet {
    pub rest: Vec<Mesh>,
    pub pairs: Vec<PosePair>,
}

impl PoseTrainingSet {
    /// `items` random (character, pose) pairs, each contributing `points_per_item`
    /// random rest vertices (all vertices when 0).
    pub fn sample_batch(&self, items: usize, points_per_item: usize, seed: u64) -> Vec<DeformSample> {
        let mut rng = seed::rng(seed);
        let mut out = Vec::new();
        if self.pairs.is_empty() {
            return out;
        }
        for _ in 0..items {
            let pair = &self.pairs[rng.random_range(0..self.pairs.len())];
            let rest = &self.rest[pair.character].vertices;
            let mut push = |v: usize| {
                out.push(DeformSample {
                    x: rest[v],
                    dx: pair.target[v] - rest[v],
                    shape_index: pair.character,
                    pose: pair.code.clone(),
                })
            };
            if points_per_item == 0 {
                (0..rest.len()).for_each(&mut push);
            } else {
                for _ in 0..points_per_item {
                    push(rng.random_range(0..rest.len()));
                }
            }
        }
        out
    }

    pub fn samples_for_pair(&self, pair: usize) -> Vec<DeformSample> {
        let p = &self.pairs[pair];
        let rest = &self.rest[p.character].vertices;
        rest.iter()
            .zip(&p.target)
            .map(|(x, t)| DeformSample {
                x: *x,
                dx: t - x,
                shape_index: p.character,
                pose: p.code.clone(),
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// On-disk layout

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub character_id: String,
    pub obj_path: String,
    pub weights_path: String,
    pub labels_path: String,
    pub pose_id: usize,
    pub pose_code: Vec<f64>,
    pub target_obj_path: String,
}

/// One line of `test_manifest.jsonl`: a stylized test character, a test pose, and the
/// source character driven into the same pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub character_id: String,
    pub obj_path: String,
    pub weights_path: String,
    pub labels_path: String,
    pub pose_id: usize,
    pub pose_code: Vec<f64>,
    pub target_obj_path: String,
    pub source_id: String,
    pub source_obj_path: String,
    pub source_target_obj_path: String,
}

/// One line of `characters.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterRecord {
    pub character_id: String,
    pub kind: CharacterKind,
    pub base_id: Option<String>,
    pub labeled: bool,
    pub params: BodyParams,
    pub style: Option<StyleParams>,
    pub obj_path: String,
    pub weights_path: String,
    pub labels_path: String,
}

pub const CHARACTERS_FILE: &str = "characters.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TEST_MANIFEST_FILE: &str = "test_manifest.jsonl";
pub const POSE_SPACE_FILE: &str = "pose_space.ckpt";

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn save_weights(character: &SkinnedCharacter, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new();
    ck.insert(
        "weights",
        Tensor::matrix(
            character.weights.vertex_count(),
            character.weights.bones,
            character.weights.data.clone(),
        ),
    );
    ck.save(path)
}

pub fn save_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new();
    let values: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    ck.insert("labels", Tensor::vector(&values));
    ck.save(path)
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let ck = Checkpoint::load(path)?;
    let v = ck.vector("labels")?;
    v.iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(Error::Invalid(format!("{}: bad part label {x}", path.display())))
            }
        })
        .collect()
}

pub fn save_pose_space(space: &PoseSpace, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new();
    ck.insert("mean", Tensor::vector(&space.mean));
    let flat: Vec<f64> = space.basis.iter().flatten().cloned().collect();
    ck.insert("basis", Tensor::matrix(space.dim(), space.width(), flat));
    ck.insert("component_scales", Tensor::vector(&space.component_scales));
    ck.insert("eigenvalues", Tensor::vector(&space.eigenvalues));
    ck.insert("effective_rank", Tensor::scalar(space.effective_rank as f64));
    ck.save(path)
}

pub fn load_pose_space(path: &Path) -> Result<PoseSpace> {
    let ck = Checkpoint::load(path)?;
    let mean = ck.vector("mean")?.to_vec();
    let basis_t = ck.get("basis")?;
    let width = mean.len();
    if basis_t.dims.len() != 2 || basis_t.dims[1] as usize != width {
        return Err(Error::Invalid(format!("{}: bad pose basis shape", path.display())));
    }
    Ok(PoseSpace {
        basis: basis_t.data.chunks(width).map(<[f64]>::to_vec).collect(),
        mean,
        component_scales: ck.vector("component_scales")?.to_vec(),
        eigenvalues: ck.vector("eigenvalues")?.to_vec(),
        effective_rank: ck.scalar("effective_rank")? as usize,
    })
}

fn rel(parts: &[&str]) -> String {
    parts.join("/")
}

/// Writes the dataset below `dir`. Paths inside the manifests are relative to `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    for sub in ["characters", "targets"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut records = Vec::new();
    for entry in &dataset.characters {
        let obj = rel(&["characters", &format!("{}.obj", entry.id)]);
        let weights = rel(&["characters", &format!("{}_weights.ckpt", entry.id)]);
        let labels = rel(&["characters", &format!("{}_labels.ckpt", entry.id)]);
        save_obj(&entry.character.mesh, dir.join(&obj))?;
        save_weights(&entry.character, &dir.join(&weights))?;
        save_labels(&entry.character.part_labels, &dir.join(&labels))?;
        records.push(CharacterRecord {
            character_id: entry.id.clone(),
            kind: entry.kind,
            base_id: entry.base.map(|b| dataset.characters[b].id.clone()),
            labeled: entry.character.labeled,
            params: entry.params,
            style: entry.style,
            obj_path: obj,
            weights_path: weights,
            labels_path: labels,
        });
    }
    write_jsonl(&dir.join(CHARACTERS_FILE), &records)?;

    let set = dataset.pose_training_set()?;
    let bases = dataset.indices(CharacterKind::Base);
    let mut manifest = Vec::new();
    for pair in &set.pairs {
        let rec = &records[bases[pair.character]];
        let target = rel(&["targets", &format!("{}_pose{:04}.obj", rec.character_id, pair.pose_id)]);
        let mesh = set.rest[pair.character].with_vertices(pair.target.clone())?;
        save_obj(&mesh, dir.join(&target))?;
        manifest.push(ManifestRecord {
            character_id: rec.character_id.clone(),
            obj_path: rec.obj_path.clone(),
            weights_path: rec.weights_path.clone(),
            labels_path: rec.labels_path.clone(),
            pose_id: pair.pose_id,
            pose_code: pair.code.clone(),
            target_obj_path: target,
        });
    }
    write_jsonl(&dir.join(MANIFEST_FILE), &manifest)?;

    let mut tests = Vec::new();
    let mut written: BTreeMap<(usize, usize), String> = BTreeMap::new();
    let mut target_for = |index: usize, pose: usize| -> Result<String> {
        if let Some(p) = written.get(&(index, pose)) {
            return Ok(p.clone());
        }
        let path = rel(&["targets", &format!("{}_test{:04}.obj", dataset.characters[index].id, pose)]);
        save_obj(&dataset.test_target(index, pose)?, dir.join(&path))?;
        written.insert((index, pose), path.clone());
        Ok(path)
    };
    for t in dataset.indices(CharacterKind::Test) {
        let source = dataset.characters[t].base.expect("test characters have a base");
        for pose in 0..dataset.test_poses.len() {
            let rec = &records[t];
            tests.push(TestRecord {
                character_id: rec.character_id.clone(),
                obj_path: rec.obj_path.clone(),
                weights_path: rec.weights_path.clone(),
                labels_path: rec.labels_path.clone(),
                pose_id: pose,
                pose_code: dataset.test_codes[pose].clone(),
                target_obj_path: target_for(t, pose)?,
                source_id: records[source].character_id.clone(),
                source_obj_path: records[source].obj_path.clone(),
                source_target_obj_path: target_for(source, pose)?,
            });
        }
    }
    write_jsonl(&dir.join(TEST_MANIFEST_FILE), &tests)?;
    save_pose_space(&dataset.pose_space, &dir.join(POSE_SPACE_FILE))
}

/// Rebuilds the pose-training ground truth from `manifest.jsonl` and the meshes it
/// references. Rest index `i` is the `i`-th distinct character in manifest order.
pub fn load_pose_training_set(dir: &Path) -> Result<(PoseTrainingSet, Vec<String>)> {
    let manifest: Vec<ManifestRecord> = read_jsonl(&dir.join(MANIFEST_FILE))?;
    let mut ids: Vec<String> = Vec::new();
    let mut set = PoseTrainingSet {
        rest: Vec::new(),
        pairs: Vec::new(),
    };
    for rec in &manifest {
        let character = match ids.iter().position(|i| *i == rec.character_id) {
            Some(i) => i,
            None => {
                set.rest.push(load_asset(dir, &rec.character_id, &rec.obj_path)?);
                ids.push(rec.character_id.clone());
                ids.len() - 1
            }
        };
        let target = load_asset(dir, &rec.character_id, &rec.target_obj_path)?;
        check_dims("target vertices", set.rest[character].vertex_count(), target.vertex_count())?;
        set.pairs.push(PosePair {
            character,
            pose_id: rec.pose_id,
            code: rec.pose_code.clone(),
            target: target.vertices,
        });
    }
    Ok((set, ids))
}

/// Shape-module training items for every non-test character listed in
/// `characters.jsonl`; labels are attached only to labeled characters.
pub fn load_shape_items(dir: &Path) -> Result<Vec<ShapeTrainItem>> {
    let records: Vec<CharacterRecord> = read_jsonl(&dir.join(CHARACTERS_FILE))?;
    records
        .iter()
        .filter(|r| r.kind != CharacterKind::Test)
        .map(|r| {
            let mesh = load_asset(dir, &r.character_id, &r.obj_path)?;
            let vertex_labels = if r.labeled {
                let labels = load_labels(&dir.join(&r.labels_path))?;
                check_dims("vertex labels", mesh.vertex_count(), labels.len())?;
                Some(labels)
            } else {
                None
            };
            Ok(ShapeTrainItem {
                id: r.character_id.clone(),
                mesh,
                vertex_labels,
            })
        })
        .collect()
}

/// Loads a mesh referenced by a manifest, reporting the owning item when it is missing.
pub fn load_asset(dir: &Path, item: &str, relative: &str) -> Result<Mesh> {
    let path: PathBuf = dir.join(relative);
    if !path.exists() {
        return Err(Error::MissingAsset {
            item: item.to_string(),
            path,
        });
    }
    load_obj(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            characters: 2,
            poses: 4,
            prior_poses: 100,
            stylized_train: 1,
            test_characters: 2,
            test_poses: 2,
            seed: 5,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn layout_and_rest_pose() {
        let d = gen_dataset(&small()).unwrap();
        assert_eq!(d.indices(CharacterKind::Base), vec![0, 1]);
        assert_eq!(d.indices(CharacterKind::StylizedTrain), vec![2, 3]);
        assert_eq!(d.indices(CharacterKind::Test), vec![4, 5]);
        assert!(d.characters[4].character.accessory_vertices().len() == 1);
        let set = d.pose_training_set().unwrap();
        assert_eq!(set.pairs.len(), 8);
        for s in set.samples_for_pair(0) {
            assert_eq!(s.dx, Vec3::zeros());
        }
        for e in &d.characters {
            assert!((e.character.mesh.vertical_extent() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_identity_pose_has_zero_offsets() {
        let cfg = DatasetConfig {
            poses: 1,
            ..small()
        };
        let d = gen_dataset(&cfg).unwrap();
        assert_eq!(d.max_offset().unwrap(), 0.0);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_dataset(&small()).unwrap();
        write_dataset(&d, dir.path()).unwrap();
        let m: Vec<ManifestRecord> = read_jsonl(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.len(), 8);
        let again = dir.path().join("again.jsonl");
        write_jsonl(&again, &m).unwrap();
        assert_eq!(
            fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(again).unwrap()
        );
        for (r, c) in m.iter().zip(&d.pose_training_set().unwrap().pairs) {
            assert_eq!(r.pose_code, c.code);
        }
        let (set, ids) = load_pose_training_set(dir.path()).unwrap();
        assert_eq!(ids, vec!["base00".to_string(), "base01".to_string()]);
        let mem = d.pose_training_set().unwrap();
        for (a, b) in set.pairs.iter().zip(&mem.pairs) {
            for (p, q) in a.target.iter().zip(&b.target) {
                assert!((p - q).norm() < 1e-5);
            }
        }
        let space = load_pose_space(&dir.path().join(POSE_SPACE_FILE)).unwrap();
        assert_eq!(space, d.pose_space);
        let labels = load_labels(&dir.path().join("characters/test00_labels.ckpt")).unwrap();
        assert_eq!(labels, d.characters[4].character.part_labels);
    }

    #[test]
    fn batches_are_deterministic() {
        let d = gen_dataset(&small()).unwrap();
        let set = d.pose_training_set().unwrap();
        let a = set.sample_batch(16, 4, 99);
        assert_eq!(a, set.sample_batch(16, 4, 99));
        assert_eq!(a.len(), 64);
    }
}

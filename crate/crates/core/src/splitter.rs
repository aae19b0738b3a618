//! Splitting multi-label caption datasets into continual-learning tasks.
//!
//! A task is a set of visual categories. An image is a candidate for every
//! task that owns one of its labels. Two procedures turn candidates into
//! final task sets:
//!
//! * disjoint: images that are candidates for more than one task are dropped
//!   from all of them;
//! * incremental: an image stays only with the last task (in task order)
//!   that it is a candidate for, so general concepts learned early can
//!   reappear in the data of later, more specific tasks.
//!
//! Either way every retained image belongs to exactly one task.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedImage {
    pub id: u64,
    /// Category ids, ascending.
    pub labels: Vec<usize>,
    pub features: Vector,
    pub captions: Vec<String>,
}

impl AnnotatedImage {
    pub fn label_vector(&self, num_categories: usize) -> Vec<bool> {
        let mut y = vec![false; num_categories];
        for &c in &self.labels {
            if c < num_categories {
                y[c] = true;
            }
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub num_categories: usize,
    #[serde(default)]
    pub category_names: Vec<String>,
    pub images: Vec<AnnotatedImage>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let d_feat = self.images.first().map(|im| im.features.len());
        for im in &self.images {
            if !ids.insert(im.id) {
                return Err(Error::Definition(format!("duplicate image id {}", im.id)));
            }
            if im.captions.is_empty() {
                return Err(Error::Definition(format!("image {} has no captions", im.id)));
            }
            if let Some(&c) = im.labels.iter().find(|&&c| c >= self.num_categories) {
                return Err(Error::Definition(format!(
                    "image {} has label {c} but there are {} categories",
                    im.id, self.num_categories
                )));
            }
            if Some(im.features.len()) != d_feat {
                return Err(Error::Definition(format!("image {} has a different feature length", im.id)));
            }
        }
        Ok(())
    }

    pub fn d_feat(&self) -> Option<usize> {
        self.images.first().map(|im| im.features.len())
    }

    pub fn by_id(&self) -> BTreeMap<u64, &AnnotatedImage> {
        self.images.iter().map(|im| (im.id, im)).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let data: Dataset = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        data.validate()?;
        Ok(data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Lower-cased alphanumeric tokens of a caption.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDef {
    pub name: String,
    pub categories: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    Disjoint,
    Incremental,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub name: String,
    pub categories: Vec<usize>,
    /// Candidate images (any label in the task's categories).
    pub candidates: usize,
    /// Retained image ids, ascending.
    pub examples: Vec<u64>,
    /// Words in the captions of the retained images, sorted.
    pub vocabulary: Vec<String>,
    #[serde(default)]
    pub train: Vec<u64>,
    #[serde(default)]
    pub valid: Vec<u64>,
    #[serde(default)]
    pub test: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub procedure: Procedure,
    pub tasks: Vec<TaskSplit>,
    #[serde(default)]
    pub partition: Option<PartitionConfig>,
}

impl SplitResult {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

fn check_tasks(data: &Dataset, tasks: &[TaskDef]) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::Definition("at least one task is required".into()));
    }
    for t in tasks {
        if t.categories.is_empty() {
            return Err(Error::Definition(format!("task {:?} has no categories", t.name)));
        }
        if let Some(&c) = t.categories.iter().find(|&&c| c >= data.num_categories) {
            return Err(Error::Definition(format!("task {:?} names unknown category {c}", t.name)));
        }
    }
    Ok(())
}

/// For every image, the indices of the tasks it is a candidate for.
fn candidate_tasks<'a>(data: &'a Dataset, tasks: &[TaskDef]) -> Vec<(&'a AnnotatedImage, Vec<usize>)> {
    let owner: Vec<Vec<usize>> = (0..data.num_categories)
        .map(|c| (0..tasks.len()).filter(|&t| tasks[t].categories.contains(&c)).collect())
        .collect();
    data.images
        .iter()
        .map(|im| {
            let ts: BTreeSet<usize> = im.labels.iter().flat_map(|&c| owner[c].iter().copied()).collect();
            (im, ts.into_iter().collect())
        })
        .collect()
}

fn assemble(data: &Dataset, tasks: &[TaskDef], procedure: Procedure, keep: impl Fn(usize, &[usize]) -> bool) -> SplitResult {
    let cands = candidate_tasks(data, tasks);
    let tasks = tasks
        .iter()
        .enumerate()
        .map(|(t, def)| {
            let mine: Vec<&(&AnnotatedImage, Vec<usize>)> = cands.iter().filter(|(_, ts)| ts.contains(&t)).collect();
            let mut examples: Vec<u64> = mine.iter().filter(|(_, ts)| keep(t, ts)).map(|(im, _)| im.id).collect();
            examples.sort_unstable();
            let kept: BTreeSet<u64> = examples.iter().copied().collect();
            let vocabulary: BTreeSet<String> = mine
                .iter()
                .filter(|(im, _)| kept.contains(&im.id))
                .flat_map(|(im, _)| im.captions.iter().flat_map(|c| tokenize(c)))
                .collect();
            TaskSplit {
                name: def.name.clone(),
                categories: def.categories.clone(),
                candidates: mine.len(),
                examples,
                vocabulary: vocabulary.into_iter().collect(),
                train: Vec::new(),
                valid: Vec::new(),
                test: Vec::new(),
            }
        })
        .collect();
    SplitResult {
        procedure,
        tasks,
        partition: None,
    }
}

/// Disjoint procedure. Category sets must be pairwise disjoint.
pub fn split_disjoint(data: &Dataset, tasks: &[TaskDef]) -> Result<SplitResult> {
    check_tasks(data, tasks)?;
    for i in 0..tasks.len() {
        for j in i + 1..tasks.len() {
            if let Some(c) = tasks[i].categories.iter().find(|c| tasks[j].categories.contains(c)) {
                return Err(Error::Definition(format!(
                    "tasks {:?} and {:?} share category {c}",
                    tasks[i].name, tasks[j].name
                )));
            }
        }
    }
    Ok(assemble(data, tasks, Procedure::Disjoint, |_, ts| ts.len() == 1))
}

/// Incremental procedure: an image is kept by the last task it matches.
pub fn split_incremental(data: &Dataset, tasks: &[TaskDef]) -> Result<SplitResult> {
    check_tasks(data, tasks)?;
    Ok(assemble(data, tasks, Procedure::Incremental, |t, ts| ts.last() == Some(&t)))
}

pub fn split(data: &Dataset, tasks: &[TaskDef], procedure: Procedure) -> Result<SplitResult> {
    match procedure {
        Procedure::Disjoint => split_disjoint(data, tasks),
        Procedure::Incremental => split_incremental(data, tasks),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Tasks with more retained images are randomly sub-sampled to this many.
    pub max_examples: Option<usize>,
    /// Captions kept per image (the first ones).
    pub captions_per_image: usize,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            valid_fraction: 0.15,
            test_fraction: 0.15,
            max_examples: None,
            captions_per_image: 5,
            seed: 0,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..1.0).contains(&f);
        if !ok(self.valid_fraction) || !ok(self.test_fraction) || self.valid_fraction + self.test_fraction >= 1.0 {
            return Err(Error::Config("valid/test fractions must be in [0, 1) and sum to < 1".into()));
        }
        if self.captions_per_image == 0 || self.max_examples == Some(0) {
            return Err(Error::Config("captions_per_image and max_examples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Seeded train/valid/test partition of every task's retained images.
pub fn partition(mut split: SplitResult, cfg: &PartitionConfig) -> Result<SplitResult> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    for (t, task) in split.tasks.iter_mut().enumerate() {
        let mut ids = task.examples.clone();
        let mut rng = root.fork("partition", t as u64);
        rng.shuffle(&mut ids);
        if let Some(cap) = cfg.max_examples {
            ids.truncate(cap);
        }
        let n = ids.len();
        let n_valid = (n as f64 * cfg.valid_fraction).round() as usize;
        let n_test = ((n as f64 * cfg.test_fraction).round() as usize).min(n - n_valid);
        let mut valid = ids[..n_valid].to_vec();
        let mut test = ids[n_valid..n_valid + n_test].to_vec();
        let mut train = ids[n_valid + n_test..].to_vec();
        valid.sort_unstable();
        test.sort_unstable();
        train.sort_unstable();
        task.train = train;
        task.valid = valid;
        task.test = test;
    }
    split.partition = Some(cfg.clone());
    Ok(split)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub name: String,
    pub images: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub words: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabStats {
    pub tasks: Vec<TaskStats>,
    /// `overlap[i][j] = |V_i ∩ V_j|`.
    pub overlap: Vec<Vec<usize>>,
    /// `100 · |V_i ∩ V_j| / |V_i|` (100 when `V_i` is empty).
    pub overlap_pct: Vec<Vec<f64>>,
}

pub fn vocab_stats(split: &SplitResult) -> VocabStats {
    let sets: Vec<BTreeSet<&String>> = split.tasks.iter().map(|t| t.vocabulary.iter().collect()).collect();
    let overlap: Vec<Vec<usize>> = sets
        .iter()
        .map(|a| sets.iter().map(|b| a.intersection(b).count()).collect())
        .collect();
    let overlap_pct = overlap
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&c| if sets[i].is_empty() { 100.0 } else { 100.0 * c as f64 / sets[i].len() as f64 })
                .collect()
        })
        .collect();
    VocabStats {
        tasks: split
            .tasks
            .iter()
            .map(|t| TaskStats {
                name: t.name.clone(),
                images: t.examples.len(),
                train: t.train.len(),
                valid: t.valid.len(),
                test: t.test.len(),
                words: t.vocabulary.len(),
            })
            .collect(),
        overlap,
        overlap_pct,
    }
}

impl VocabStats {
    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {:>7} {:>7} {:>7} {:>7} {:>7}\n", "task", "images", "train", "valid", "test", "words");
        for t in &self.tasks {
            out += &format!(
                "{:<16} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
                t.name, t.images, t.train, t.valid, t.test, t.words
            );
        }
        out += "word overlap (% of row task vocabulary)\n";
        for (t, row) in self.tasks.iter().zip(&self.overlap_pct) {
            out += &format!("{:<16}", t.name);
            for v in row {
                out += &format!(" {v:>6.1}");
            }
            out.push('\n');
        }
        out
    }
}

/// Parameters of the synthetic caption dataset.
///
/// Every category owns `words_per_category` content words split evenly over
/// `slots` slot types, and `templates_per_category` caption templates made of
/// the content slots interleaved with words from a shared function-word pool.
/// An image draws a category, a template and one content word per slot; its
/// features are the sum of fixed random prototypes of those choices plus
/// Gaussian noise, and its captions realize the template with the drawn
/// words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_categories: usize,
    pub images_per_category: usize,
    pub words_per_category: usize,
    pub shared_pool: usize,
    pub slots: usize,
    pub templates_per_category: usize,
    pub min_caption_len: usize,
    pub max_caption_len: usize,
    pub captions_per_image: usize,
    /// Probability that a pool word of a caption is swapped for a random one.
    pub word_noise: f64,
    /// Probability that an image also carries a second category.
    pub overlap_rate: f64,
    pub d_feat: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_categories: 3,
            images_per_category: 700,
            words_per_category: 100,
            shared_pool: 50,
            slots: 4,
            templates_per_category: 4,
            min_caption_len: 8,
            max_caption_len: 11,
            captions_per_image: 5,
            word_noise: 0.1,
            overlap_rate: 0.0,
            d_feat: 64,
            feature_noise: 0.3,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_categories == 0 || self.d_feat == 0 || self.captions_per_image == 0 {
            return fail("num_categories, d_feat and captions_per_image must be >= 1");
        }
        if self.slots == 0 || self.words_per_category < self.slots {
            return fail("need 1 <= slots <= words_per_category");
        }
        if self.templates_per_category == 0 {
            return fail("templates_per_category must be >= 1");
        }
        if self.min_caption_len < self.slots || self.max_caption_len < self.min_caption_len {
            return fail("need slots <= min_caption_len <= max_caption_len");
        }
        if self.shared_pool == 0 && self.max_caption_len > self.slots {
            return fail("captions longer than the slot count need a shared word pool");
        }
        if !(0.0..=1.0).contains(&self.word_noise) || !(0.0..=1.0).contains(&self.overlap_rate) {
            return fail("word_noise and overlap_rate must be probabilities");
        }
        if !(self.feature_noise >= 0.0) {
            return fail("feature_noise must be >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Slot {
    Pool(usize),
    Content(usize),
}

fn pool_word(k: usize) -> String {
    format!("p{k}")
}

fn content_word(cat: usize, slot: usize, k: usize) -> String {
    format!("c{cat}s{slot}w{k}")
}

fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Deterministic synthetic dataset. Image ids are `0..`, grouped by primary
/// category.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let per_slot = spec.words_per_category / spec.slots;
    let d = spec.d_feat;
    let scale = 1.0 / ((spec.slots + 2) as f64).sqrt();

    // fixed structure of each category
    let mut structure = root.fork("structure", 0);
    let templates: Vec<Vec<Vec<Slot>>> = (0..spec.num_categories)
        .map(|_| {
            (0..spec.templates_per_category)
                .map(|_| {
                    let len = spec.min_caption_len + structure.below(spec.max_caption_len - spec.min_caption_len + 1);
                    let mut content_pos: Vec<usize> = (0..len).collect();
                    structure.shuffle(&mut content_pos);
                    let mut content_pos = content_pos[..spec.slots].to_vec();
                    content_pos.sort_unstable();
                    let mut next = 0;
                    (0..len)
                        .map(|p| {
                            if next < spec.slots && content_pos[next] == p {
                                next += 1;
                                Slot::Content(next - 1)
                            } else {
                                Slot::Pool(structure.below(spec.shared_pool))
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut protos = root.fork("prototypes", 0);
    let cat_proto: Vec<Vec<f64>> = (0..spec.num_categories).map(|_| normal_vec(&mut protos, d)).collect();
    let tmpl_proto: Vec<Vec<Vec<f64>>> = (0..spec.num_categories)
        .map(|_| (0..spec.templates_per_category).map(|_| normal_vec(&mut protos, d)).collect())
        .collect();
    let word_proto: Vec<Vec<Vec<Vec<f64>>>> = (0..spec.num_categories)
        .map(|_| {
            (0..spec.slots)
                .map(|_| (0..per_slot).map(|_| normal_vec(&mut protos, d)).collect())
                .collect()
        })
        .collect();

    let mut images = Vec::with_capacity(spec.num_categories * spec.images_per_category);
    for cat in 0..spec.num_categories {
        let mut rng = root.fork("images", cat as u64);
        for n in 0..spec.images_per_category {
            let id = (cat * spec.images_per_category + n) as u64;
            let mut cats = vec![cat];
            if spec.num_categories > 1 && rng.bernoulli(spec.overlap_rate) {
                let other = (cat + 1 + rng.below(spec.num_categories - 1)) % spec.num_categories;
                cats.push(other);
            }
            let mut features = vec![0.0; d];
            let mut captions = Vec::with_capacity(spec.captions_per_image);
            for (rank, &c) in cats.iter().enumerate() {
                let tmpl = rng.below(spec.templates_per_category);
                let words: Vec<usize> = (0..spec.slots).map(|_| rng.below(per_slot)).collect();
                let weight = if rank == 0 { 1.0 } else { 0.7 };
                for i in 0..d {
                    let mut v = cat_proto[c][i] + tmpl_proto[c][tmpl][i];
                    for (s, &w) in words.iter().enumerate() {
                        v += word_proto[c][s][w][i];
                    }
                    features[i] += weight * scale * v;
                }
                // the secondary category narrates the last caption
                let count = if cats.len() == 1 {
                    spec.captions_per_image
                } else if rank == 0 {
                    spec.captions_per_image.saturating_sub(1).max(1)
                } else {
                    1
                };
                for _ in 0..count {
                    let caption: Vec<String> = templates[c][tmpl]
                        .iter()
                        .map(|slot| match *slot {
                            Slot::Content(s) => content_word(c, s, words[s]),
                            Slot::Pool(_) if rng.bernoulli(spec.word_noise) => pool_word(rng.below(spec.shared_pool)),
                            Slot::Pool(k) => pool_word(k),
                        })
                        .collect();
                    captions.push(caption.join(" "));
                }
            }
            captions.truncate(spec.captions_per_image);
            for v in features.iter_mut() {
                *v += spec.feature_noise * rng.normal();
            }
            cats.sort_unstable();
            images.push(AnnotatedImage {
                id,
                labels: cats,
                features: Vector(features),
                captions,
            });
        }
    }
    Ok(Dataset {
        num_categories: spec.num_categories,
        category_names: (0..spec.num_categories).map(|c| format!("category{c}")).collect(),
        images,
    })
}

/// Random multi-label images with caption-less structure, for exercising the
/// split procedures at scale.
pub fn random_multilabel(n: usize, num_categories: usize, label_prob: f64, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let images = (0..n as u64)
        .map(|id| {
            let mut labels: Vec<usize> = (0..num_categories).filter(|_| rng.bernoulli(label_prob)).collect();
            if labels.is_empty() {
                labels.push(rng.below(num_categories));
            }
            AnnotatedImage {
                id,
                labels,
                features: Vector(vec![0.0]),
                captions: vec![format!("image {id}")],
            }
        })
        .collect();
    Dataset {
        num_categories,
        category_names: Vec::new(),
        images,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defs(sets: &[&[usize]]) -> Vec<TaskDef> {
        sets.iter()
            .enumerate()
            .map(|(i, c)| TaskDef { name: format!("t{i}"), categories: c.to_vec() })
            .collect()
    }

    fn img(id: u64, labels: &[usize]) -> AnnotatedImage {
        AnnotatedImage {
            id,
            labels: labels.to_vec(),
            features: Vector(vec![0.0]),
            captions: vec![format!("word{id} shared")],
        }
    }

    fn data(images: Vec<AnnotatedImage>) -> Dataset {
        Dataset { num_categories: 4, category_names: vec![], images }
    }

    #[test]
    fn disjoint_prunes_cross_task_images() {
        let d = data(vec![img(0, &[0]), img(1, &[0, 2]), img(2, &[2]), img(3, &[1, 0])]);
        let s = split_disjoint(&d, &defs(&[&[0, 1], &[2]])).unwrap();
        assert_eq!(s.tasks[0].examples, vec![0, 3]);
        assert_eq!(s.tasks[1].examples, vec![2]);
        assert_eq!(s.tasks[0].candidates, 3);
        assert!(split_disjoint(&d, &defs(&[&[0, 1], &[1]])).is_err());
        assert!(split_disjoint(&d, &defs(&[&[9]])).is_err());
        assert!(split_disjoint(&d, &[]).is_err());
    }

    #[test]
    fn incremental_assigns_to_last_match() {
        let d = data(vec![img(0, &[0]), img(1, &[0, 2]), img(2, &[1]), img(3, &[2])]);
        let s = split_incremental(&d, &defs(&[&[0], &[1], &[2]])).unwrap();
        assert_eq!(s.tasks[0].examples, vec![0]);
        assert_eq!(s.tasks[1].examples, vec![2]);
        assert_eq!(s.tasks[2].examples, vec![1, 3]);
    }

    #[test]
    fn single_task_keeps_all_candidates() {
        let d = data(vec![img(0, &[0]), img(1, &[0, 1]), img(2, &[3])]);
        let s = split_disjoint(&d, &defs(&[&[0, 1]])).unwrap();
        assert_eq!(s.tasks[0].examples, vec![0, 1]);
        assert_eq!(s.tasks[0].vocabulary, vec!["shared", "word0", "word1"]);
    }

    #[test]
    fn order_invariant() {
        let d = random_multilabel(300, 4, 0.3, 5);
        let mut r = d.clone();
        r.images.reverse();
        let t = defs(&[&[0], &[1, 2], &[3]]);
        assert_eq!(split_disjoint(&d, &t).unwrap(), split_disjoint(&r, &t).unwrap());
        assert_eq!(split_incremental(&d, &t).unwrap(), split_incremental(&r, &t).unwrap());
    }

    #[test]
    fn partition_is_seeded_and_complete() {
        let d = random_multilabel(200, 2, 0.0, 1);
        let s = split_disjoint(&d, &defs(&[&[0], &[1]])).unwrap();
        let cfg = PartitionConfig { valid_fraction: 0.2, test_fraction: 0.1, seed: 3, ..Default::default() };
        let a = partition(s.clone(), &cfg).unwrap();
        assert_eq!(a, partition(s.clone(), &cfg).unwrap());
        for t in &a.tasks {
            let mut all: Vec<u64> = t.train.iter().chain(&t.valid).chain(&t.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, t.examples);
            assert_eq!(t.valid.len(), (t.examples.len() as f64 * 0.2).round() as usize);
        }
        let capped = partition(s, &PartitionConfig { max_examples: Some(10), ..cfg }).unwrap();
        assert!(capped.tasks.iter().all(|t| t.train.len() + t.valid.len() + t.test.len() == 10));
    }

    #[test]
    fn stats_shape() {
        let d = data(vec![img(0, &[0]), img(1, &[1])]);
        let st = vocab_stats(&split_disjoint(&d, &defs(&[&[0], &[1]])).unwrap());
        assert_eq!(st.overlap, vec![vec![2, 1], vec![1, 2]]);
        assert_eq!(st.overlap_pct[0][0], 100.0);
        assert_eq!(st.overlap_pct[1][0], 50.0);
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let spec = SyntheticSpec { images_per_category: 20, overlap_rate: 0.3, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        a.validate().unwrap();
        assert_eq!(a.images.len(), 60);
        assert!(a.images.iter().all(|im| im.captions.len() == 5));
        assert!(a.images.iter().any(|im| im.labels.len() == 2));
        let c = generate_synthetic(&SyntheticSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("A dog, running!  fast"), vec!["a", "dog", "running", "fast"]);
    }
}

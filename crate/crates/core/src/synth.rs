//! A procedurally generated miniature pathology world: organ/class texture
//! families, captioned corpora with known strata, and labeled task images.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, ImageGrid, ImageSource, KeywordSpec, LabeledImage, TaskDataset};
use crate::zeroshot::PromptBank;
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOrgan {
    /// Site word used in captions and as the site keyword.
    pub name: String,
    /// Class phrases, in label order.
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthTaskSpec {
    pub organs: Vec<SynthOrgan>,
    /// Neutral caption words; none may be an organ or class word.
    pub fillers: Vec<String>,
    /// Prompt templates for the generated prompt banks.
    pub templates: Vec<String>,
    pub image_height: usize,
    pub image_width: usize,
    pub image_channels: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Strength of the class texture relative to the organ color.
    pub class_contrast: f64,
    pub seed: u64,
}

fn organ(name: &str, classes: &[&str]) -> SynthOrgan {
    SynthOrgan {
        name: name.into(),
        classes: classes.iter().map(|c| c.to_string()).collect(),
    }
}

const FILLERS: &[&str] = &[
    "image", "of", "section", "slide", "showing", "tissue", "stained", "microscopy", "sample", "view", "field",
    "high", "power", "low", "with", "the", "a", "and", "histology", "specimen", "pattern", "cells", "region",
    "magnified", "biopsy", "core", "architecture", "nuclei", "stroma", "cytoplasm", "fragment", "area",
    "case", "shows", "seen", "here", "under", "lens", "this", "is", "detail", "zoom", "panel", "left", "right",
    "upper", "lower", "center", "edge", "margin", "surface", "layer", "deep", "cut", "fixed", "frozen",
    "routine", "stain", "pink", "purple", "blue", "dense", "loose", "small", "large", "round", "oval",
    "clear", "dark", "light", "focal", "diffuse", "scattered", "cluster", "sheet", "nest", "strand", "lumen",
    "wall", "vessel", "fiber", "matrix", "border", "typical", "example", "teaching", "photo", "figure",
];

impl Default for SynthTaskSpec {
    fn default() -> Self {
        SynthTaskSpec {
            organs: vec![
                organ("breast", &["normal", "benign", "in situ", "invasive"]),
                organ("colon", &["hyperplastic", "serrated"]),
                organ("prostate", &["non-cancerous", "gleason three", "gleason four", "gleason five"]),
                organ("skin", &["melanoma", "nevus"]),
                organ("lung", &["adenocarcinoma", "squamous"]),
            ],
            fillers: FILLERS.iter().map(|s| s.to_string()).collect(),
            templates: vec!["{}".into(), "{} tissue".into(), "image of {}".into()],
            image_height: 12,
            image_width: 12,
            image_channels: 3,
            noise: 0.1,
            class_contrast: 0.25,
            seed: 0,
        }
    }
}

/// Fractions of a generated corpus per stratum, relative to one target
/// organ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevanceMix {
    /// Caption names the target organ and a class; image matches.
    pub task: f64,
    /// Caption names the target organ only; image is some class of it.
    pub domain_only: f64,
    /// Caption and image belong to another organ.
    pub off_domain: f64,
    /// Caption as in `task`, image from a different (organ, class).
    pub noise: f64,
}

impl RelevanceMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.task, self.domain_only, self.off_domain, self.noise];
        if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(format!("relevance mix has a negative part: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("relevance mix must sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// Integer counts for `size` records: floors plus largest remainders,
    /// earlier strata first on ties.
    pub fn counts(&self, size: usize) -> StratumCounts {
        let parts = [self.task, self.domain_only, self.off_domain, self.noise];
        let exact: Vec<f64> = parts.iter().map(|p| p * size as f64).collect();
        let mut n: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut left = size - n.iter().sum::<usize>().min(size);
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            n[i] += 1;
            left -= 1;
        }
        StratumCounts {
            task: n[0],
            domain_only: n[1],
            off_domain: n[2],
            noise: n[3],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCounts {
    pub task: usize,
    pub domain_only: usize,
    pub off_domain: usize,
    pub noise: usize,
}

impl StratumCounts {
    /// Records a domain (site keyword) retrieval must return.
    pub fn expected_domain(&self) -> usize {
        self.task + self.domain_only + self.noise
    }

    /// Records a task (site + class keyword) retrieval must return.
    pub fn expected_task(&self) -> usize {
        self.task + self.noise
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stratum {
    Task,
    DomainOnly,
    OffDomain,
    Noise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<CaptionRecord>,
    /// Stratum of each record, parallel to `records`.
    pub strata: Vec<Stratum>,
    pub counts: StratumCounts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// SplitMix64 fold, for independent per-record streams.
fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

const PALETTE: u64 = 1;
const CORPUS: u64 = 2;
const PRETRAIN: u64 = 3;
const DATASET: u64 = 4;

/// Per-(organ, class) texture templates and per-organ base colors.
struct Signatures {
    colors: Vec<Vec<f64>>,
    /// Indexed by organ, then class.
    templates: Vec<Vec<Vec<f64>>>,
}

impl SynthTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if self.organs.len() < 2 {
            return bad("need at least two organs".into());
        }
        if self.image_height == 0 || self.image_width == 0 || self.image_channels == 0 {
            return bad("image dims must be >= 1".into());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if self.fillers.is_empty() {
            return bad("no filler words".into());
        }
        let mut reserved = std::collections::HashSet::new();
        for o in &self.organs {
            if o.classes.len() < 2 {
                return bad(format!("organ {:?} needs at least two classes", o.name));
            }
            reserved.extend(crate::corpus::words(&o.name));
            for c in &o.classes {
                reserved.extend(crate::corpus::words(c));
            }
        }
        for f in &self.fillers {
            let w = crate::corpus::words(f);
            if w.len() != 1 || w[0] != *f {
                return bad(format!("filler {f:?} must be one normalized word"));
            }
            if reserved.contains(f) {
                return bad(format!("filler {f:?} collides with an organ or class word"));
            }
        }
        Ok(())
    }

    pub fn organ_index(&self, name: &str) -> Result<usize> {
        self.organs
            .iter()
            .position(|o| o.name == name)
            .ok_or_else(|| Error::UnknownOrgan(name.to_string()))
    }

    /// Site keyword = organ word; one class keyword per class phrase.
    pub fn keyword_spec(&self, organ: &str) -> Result<KeywordSpec> {
        let o = &self.organs[self.organ_index(organ)?];
        Ok(KeywordSpec {
            task_name: o.name.clone(),
            site_keywords: vec![o.name.clone()],
            class_keywords: o.classes.iter().map(|c| (c.clone(), vec![c.clone()])).collect(),
        })
    }

    /// Templates × {class, "organ class"} for each class.
    pub fn prompt_bank(&self, organ: &str) -> Result<PromptBank> {
        let o = &self.organs[self.organ_index(organ)?];
        let classnames: IndexMap<String, Vec<String>> = o
            .classes
            .iter()
            .map(|c| (c.clone(), vec![c.clone(), format!("{} {c}", o.name)]))
            .collect();
        Ok(PromptBank {
            templates: self.templates.clone(),
            classnames,
        })
    }

    fn signatures(&self) -> Signatures {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, PALETTE]));
        let (h, w, c) = (self.image_height, self.image_width, self.image_channels);
        let mut colors = Vec::new();
        let mut templates = Vec::new();
        for o in &self.organs {
            colors.push((0..c).map(|_| rng.random_range(0.3..0.7)).collect());
            let mut per_class = Vec::new();
            for _ in &o.classes {
                let mut t = vec![0.0; h * w * c];
                for _ in 0..2 {
                    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                    let freq: f64 = rng.random_range(1.0..3.0);
                    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let weights: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
                    for y in 0..h {
                        for x in 0..w {
                            let u = (x as f64 * theta.cos() + y as f64 * theta.sin()) / w as f64;
                            let s = (std::f64::consts::TAU * freq * u + phase).sin();
                            for (ch, wt) in weights.iter().enumerate() {
                                t[(y * w + x) * c + ch] += 0.5 * wt * s;
                            }
                        }
                    }
                }
                per_class.push(t);
            }
            templates.push(per_class);
        }
        Signatures { colors, templates }
    }

    fn render(&self, sig: &Signatures, organ: usize, class: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
        let c = self.image_channels;
        let amp = self.class_contrast * rng.random_range(0.7..1.0);
        let normal = Normal::new(0.0, self.noise.max(f64::MIN_POSITIVE)).expect("noise is finite");
        let data = sig.templates[organ][class]
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let n = if self.noise > 0.0 { normal.sample(rng) } else { 0.0 };
                (sig.colors[organ][i % c] + amp * t + n).clamp(0.0, 1.0)
            })
            .collect();
        ImageGrid::new(self.image_height, self.image_width, c, data).expect("pixels are clamped")
    }

    fn fillers(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<&str> {
        (0..n).map(|_| self.fillers[rng.random_range(0..self.fillers.len())].as_str()).collect()
    }

    /// `fillers organ [class] fillers`.
    fn caption(&self, rng: &mut ChaCha8Rng, organ: usize, class: Option<usize>) -> String {
        let pre = rng.random_range(1..=3);
        let post = rng.random_range(0..=2);
        let mut parts = self.fillers(rng, pre);
        parts.push(&self.organs[organ].name);
        if let Some(k) = class {
            parts.push(&self.organs[organ].classes[k]);
        }
        parts.extend(self.fillers(rng, post));
        parts.join(" ")
    }

    /// A different (organ, class) pair than the given one.
    fn other_pair(&self, rng: &mut ChaCha8Rng, organ: usize, class: usize) -> (usize, usize) {
        loop {
            let o = rng.random_range(0..self.organs.len());
            let k = rng.random_range(0..self.organs[o].classes.len());
            if (o, k) != (organ, class) {
                return (o, k);
            }
        }
    }

    fn other_organ(&self, rng: &mut ChaCha8Rng, organ: usize) -> usize {
        let o = rng.random_range(0..self.organs.len() - 1);
        if o >= organ {
            o + 1
        } else {
            o
        }
    }
}

/// A retrievable corpus around `target`. Strata sizes follow
/// [`RelevanceMix::counts`]; records are shuffled and each draws from its
/// own seeded stream, so generation parallelizes without changing output.
pub fn generate_corpus(spec: &SynthTaskSpec, target: &str, size: usize, mix: &RelevanceMix) -> Result<SynthCorpus> {
    spec.validate()?;
    mix.validate()?;
    if size == 0 {
        return Err(Error::InvalidArgument("corpus size must be >= 1".into()));
    }
    let t = spec.organ_index(target)?;
    let counts = mix.counts(size);
    let mut strata: Vec<Stratum> = [
        (Stratum::Task, counts.task),
        (Stratum::DomainOnly, counts.domain_only),
        (Stratum::OffDomain, counts.off_domain),
        (Stratum::Noise, counts.noise),
    ]
    .iter()
    .flat_map(|&(s, n)| std::iter::repeat_n(s, n))
    .collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, CORPUS, t as u64]));
    rand::seq::SliceRandom::shuffle(strata.as_mut_slice(), &mut order_rng);

    let sig = spec.signatures();
    let indexed: Vec<(usize, Stratum)> = strata.iter().copied().enumerate().collect();
    let records = par::map(&indexed, |&(i, stratum)| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, CORPUS, t as u64, i as u64]));
        let n_classes = spec.organs[t].classes.len();
        let (caption, (io, ik)) = match stratum {
            Stratum::Task => {
                let k = rng.random_range(0..n_classes);
                (spec.caption(&mut rng, t, Some(k)), (t, k))
            }
            Stratum::DomainOnly => {
                let k = rng.random_range(0..n_classes);
                (spec.caption(&mut rng, t, None), (t, k))
            }
            Stratum::OffDomain => {
                let o = spec.other_organ(&mut rng, t);
                let k = rng.random_range(0..spec.organs[o].classes.len());
                let mention = rng.random_bool(0.5).then_some(k);
                (spec.caption(&mut rng, o, mention), (o, k))
            }
            Stratum::Noise => {
                let k = rng.random_range(0..n_classes);
                let caption = spec.caption(&mut rng, t, Some(k));
                (caption, spec.other_pair(&mut rng, t, k))
            }
        };
        CaptionRecord {
            id: format!("{target}-{i:06}"),
            image: ImageSource::Inline(spec.render(&sig, io, ik, &mut rng)),
            caption,
            source: "synthetic".into(),
        }
    });
    Ok(SynthCorpus {
        records,
        strata,
        counts,
    })
}

/// Broad corpus for base pretraining: organs uniform, organ always
/// correct; half the captions name a class, and the image shows that class
/// only with probability `class_fidelity` (otherwise a random class of the
/// same organ).
pub fn generate_pretraining_corpus(spec: &SynthTaskSpec, size: usize, class_fidelity: f64) -> Result<Vec<CaptionRecord>> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&class_fidelity) {
        return Err(Error::InvalidArgument(format!("class_fidelity must lie in [0, 1], got {class_fidelity}")));
    }
    let sig = spec.signatures();
    let idx: Vec<usize> = (0..size).collect();
    Ok(par::map(&idx, |&i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, PRETRAIN, i as u64]));
        let o = rng.random_range(0..spec.organs.len());
        let n = spec.organs[o].classes.len();
        let k = rng.random_range(0..n);
        let mention = rng.random_bool(0.5).then_some(k);
        let shown = if rng.random_bool(class_fidelity) { k } else { rng.random_range(0..n) };
        let caption = spec.caption(&mut rng, o, mention);
        CaptionRecord {
            id: format!("pre-{i:06}"),
            image: ImageSource::Inline(spec.render(&sig, o, shown, &mut rng)),
            caption,
            source: "synthetic-pretrain".into(),
        }
    }))
}

/// Balanced labeled images for one organ. Train and test draw from
/// disjoint streams and carry split-specific ids.
pub fn generate_task_dataset(spec: &SynthTaskSpec, organ: &str, n_per_class: usize, split: Split) -> Result<TaskDataset> {
    spec.validate()?;
    let o = spec.organ_index(organ)?;
    let sig = spec.signatures();
    let classes = spec.organs[o].classes.clone();
    let split_tag = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let idx: Vec<usize> = (0..n_per_class * classes.len()).collect();
    let items = par::map(&idx, |&i| {
        let label = i % classes.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, DATASET, o as u64, split_tag, i as u64]));
        LabeledImage {
            id: format!("{organ}-{split:?}-{i:05}").to_lowercase(),
            label,
            image: spec.render(&sig, o, label, &mut rng),
        }
    });
    TaskDataset::new(organ.to_string(), classes, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{match_keywords, RetrievalMode};

    fn mix(t: f64, d: f64, o: f64, n: f64) -> RelevanceMix {
        RelevanceMix {
            task: t,
            domain_only: d,
            off_domain: o,
            noise: n,
        }
    }

    #[test]
    fn default_spec_is_valid() {
        SynthTaskSpec::default().validate().unwrap();
        let mut bad = SynthTaskSpec::default();
        bad.fillers.push("invasive".into());
        assert!(bad.validate().is_err());
    }

    #[test]
    fn shipped_prompt_banks_match_generator() {
        let spec = SynthTaskSpec::default();
        for organ in ["breast", "colon", "prostate"] {
            let shipped = PromptBank::bundled(&format!("synthetic-{organ}")).unwrap();
            assert_eq!(shipped, spec.prompt_bank(organ).unwrap(), "{organ}");
        }
    }

    #[test]
    fn retrieval_counts_follow_strata() {
        let spec = SynthTaskSpec::default();
        let c = generate_corpus(&spec, "breast", 100, &mix(0.25, 0.25, 0.5, 0.0)).unwrap();
        let kw = spec.keyword_spec("breast").unwrap();
        assert_eq!(match_keywords(&c.records, &kw, RetrievalMode::Domain).len(), 50);
        assert_eq!(match_keywords(&c.records, &kw, RetrievalMode::Task).len(), 25);
        assert_eq!(c.counts.expected_domain(), 50);
    }

    #[test]
    fn counts_use_largest_remainder() {
        let c = mix(0.3, 0.3, 0.4, 0.0).counts(7);
        assert_eq!(c.task + c.domain_only + c.off_domain + c.noise, 7);
        assert_eq!((c.task, c.domain_only, c.off_domain), (2, 2, 3));
        assert!(mix(0.5, 0.5, 0.5, 0.0).validate().is_err());
    }

    #[test]
    fn full_noise_mismatches_every_pair() {
        let spec = SynthTaskSpec {
            noise: 0.0,
            ..SynthTaskSpec::default()
        };
        let c = generate_corpus(&spec, "colon", 30, &mix(0.0, 0.0, 0.0, 1.0)).unwrap();
        let sig = spec.signatures();
        let kw = spec.keyword_spec("colon").unwrap();
        for r in &c.records {
            let ImageSource::Inline(img) = &r.image else { panic!() };
            let caption_class = kw.classes().position(|k| r.caption.contains(k)).unwrap();
            // The image is not a rendering of the captioned class at any amplitude.
            let t = &sig.templates[1][caption_class];
            let base = &sig.colors[1];
            let resid: Vec<f64> =
                img.data().iter().enumerate().map(|(i, v)| v - base[i % 3]).collect();
            let dot: f64 = resid.iter().zip(t).map(|(a, b)| a * b).sum();
            let tt: f64 = t.iter().map(|v| v * v).sum();
            let amp = dot / tt;
            let err: f64 = resid.iter().zip(t).map(|(a, b)| (a - amp * b).powi(2)).sum();
            assert!(err > 1e-6, "{} looks like its caption", r.id);
        }
    }

    #[test]
    fn deterministic() {
        let spec = SynthTaskSpec::default();
        let m = mix(0.4, 0.2, 0.3, 0.1);
        assert_eq!(
            generate_corpus(&spec, "prostate", 40, &m).unwrap(),
            generate_corpus(&spec, "prostate", 40, &m).unwrap()
        );
        assert_eq!(
            generate_pretraining_corpus(&spec, 20, 0.3).unwrap(),
            generate_pretraining_corpus(&spec, 20, 0.3).unwrap()
        );
    }

    #[test]
    fn task_dataset_shape_and_split() {
        let spec = SynthTaskSpec::default();
        let train = generate_task_dataset(&spec, "breast", 25, Split::Train).unwrap();
        assert_eq!(train.items.len(), 100);
        assert_eq!(train.class_counts(), [25; 4]);
        let test = generate_task_dataset(&spec, "breast", 25, Split::Test).unwrap();
        assert!(train.items.iter().all(|a| test.items.iter().all(|b| a.id != b.id && a.image != b.image)));
        assert_eq!(generate_task_dataset(&spec, "colon", 1, Split::Test).unwrap().items.len(), 2);
        assert!(matches!(
            generate_task_dataset(&spec, "liver", 1, Split::Test),
            Err(Error::UnknownOrgan(_))
        ));
    }

    #[test]
    fn linear_probe_separates_classes_without_noise() {
        // Nearest class mean on raw pixels is a linear classifier.
        let spec = SynthTaskSpec {
            noise: 0.0,
            ..SynthTaskSpec::default()
        };
        for o in &spec.organs {
            let train = generate_task_dataset(&spec, &o.name, 20, Split::Train).unwrap();
            let test = generate_task_dataset(&spec, &o.name, 20, Split::Test).unwrap();
            let k = train.num_classes();
            let d = train.items[0].image.data().len();
            let mut means = vec![vec![0.0; d]; k];
            for it in &train.items {
                for (m, v) in means[it.label].iter_mut().zip(it.image.data()) {
                    *m += v / 20.0;
                }
            }
            let correct = test
                .items
                .iter()
                .filter(|it| {
                    let dist = |m: &Vec<f64>| m.iter().zip(it.image.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    (0..k).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))).unwrap() == it.label
                })
                .count();
            assert!(correct as f64 / test.items.len() as f64 > 0.95, "{}", o.name);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn retrieval_always_equals_bookkeeping(
            weights in proptest::collection::vec(0.0f64..1.0, 4),
            size in 1usize..80,
            organ in 0usize..5,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let spec = SynthTaskSpec { image_height: 1, image_width: 1, image_channels: 1, seed, ..SynthTaskSpec::default() };
            let total: f64 = weights.iter().sum::<f64>().max(1e-9);
            let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
            let m = mix(w[0], w[1], w[2], (1.0 - w[0] - w[1] - w[2]).max(0.0));
            proptest::prop_assume!(m.validate().is_ok());
            let target = spec.organs[organ].name.clone();
            let c = generate_corpus(&spec, &target, size, &m).unwrap();
            let n = c.counts;
            proptest::prop_assert_eq!(n.task + n.domain_only + n.off_domain + n.noise, size);
            let kw = spec.keyword_spec(&target).unwrap();
            proptest::prop_assert_eq!(match_keywords(&c.records, &kw, RetrievalMode::Domain).len(), n.expected_domain());
            proptest::prop_assert_eq!(match_keywords(&c.records, &kw, RetrievalMode::Task).len(), n.expected_task());
        }
    }
}

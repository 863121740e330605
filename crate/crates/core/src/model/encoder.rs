use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dense::{gaussian, Dense, DenseVars, ParamKind, UpdateMode};
use super::vocab::{Vocabulary, PAD_ID};
use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::ImageGrid;
use crate::{par, Error, Result};

/// Rows encoded per forward pass when batch-encoding.
const ENCODE_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub max_len: usize,
    pub d_tok: usize,
    pub d_hidden: usize,
    pub d_emb: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub image_channels: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_len: 16,
            d_tok: 16,
            d_hidden: 32,
            d_emb: 64,
            image_height: 12,
            image_width: 12,
            image_channels: 3,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        let dims = [
            ("max_len", self.max_len),
            ("d_tok", self.d_tok),
            ("d_hidden", self.d_hidden),
            ("d_emb", self.d_emb),
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("image_channels", self.image_channels),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("model config {name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.image_height * self.image_width * self.image_channels
    }
}

/// Which dense layers receive LoRA overlays.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoraTarget {
    /// The final projection of each branch.
    #[default]
    ProjectionsOnly,
    AllDense,
}

/// Text and image encoders into a shared unit-norm embedding space.
///
/// Text: token embedding, two tanh feedforward blocks applied per token,
/// mean pooling over non-pad tokens, projection. Image: flatten (centered to
/// [-1, 1]), two tanh blocks, projection. Both outputs are L2-normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEncoderModel {
    config: ModelConfig,
    vocab: Vocabulary,
    fingerprint: String,
    token_embedding: Tensor,
    /// Two blocks then the projection.
    text: Vec<Dense>,
    image: Vec<Dense>,
}

/// Model parameters bound as leaves of one tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    token_embedding: Var,
    text: Vec<DenseVars>,
    image: Vec<DenseVars>,
}

impl ModelVars {
    pub fn token_embedding(&self) -> Var {
        self.token_embedding
    }

    fn slots(&self) -> Vec<(ParamKind, Var)> {
        let mut out = vec![(ParamKind::Base, self.token_embedding)];
        for d in self.text.iter().chain(&self.image) {
            out.extend(d.slots());
        }
        out
    }
}

fn fingerprint(config: &ModelConfig, vocab: &Vocabulary) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(serde_json::to_vec(vocab).expect("vocab serializes"));
    hex::encode(h.finalize())
}

impl DualEncoderModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let (t, h, e) = (config.d_tok, config.d_hidden, config.d_emb);
        let token_embedding = gaussian(&mut rng, vec![vocab.len(), t], 1.0);
        let text = vec![
            Dense::init(t, h, &mut rng),
            Dense::init(h, h, &mut rng),
            Dense::init(h, e, &mut rng),
        ];
        let image = vec![
            Dense::init(config.image_len(), h, &mut rng),
            Dense::init(h, h, &mut rng),
            Dense::init(h, e, &mut rng),
        ];
        Ok(DualEncoderModel {
            fingerprint: fingerprint(&config, &vocab),
            config,
            vocab,
            token_embedding,
            text,
            image,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn d_emb(&self) -> usize {
        self.config.d_emb
    }

    /// Embedding row for one token id.
    pub fn token_vector(&self, id: u32) -> &[f64] {
        self.token_embedding.row(id as usize)
    }

    pub fn has_lora(&self) -> bool {
        self.text.iter().chain(&self.image).any(|d| d.lora.is_some())
    }

    pub fn text_layers(&self) -> &[Dense] {
        &self.text
    }

    pub fn image_layers(&self) -> &[Dense] {
        &self.image
    }

    /// Tokenize with this model's vocabulary and `max_len`.
    pub fn tokenize(&self, caption: &str) -> Vec<u32> {
        super::tokenize(caption, &self.vocab, self.config.max_len).expect("max_len validated")
    }

    pub fn inject_lora(&mut self, target: LoraTarget, rank: usize, alpha: f64, seed: u64) -> Result<()> {
        let mut layers: Vec<&mut Dense> = match target {
            LoraTarget::ProjectionsOnly => vec![&mut self.text[2], &mut self.image[2]],
            LoraTarget::AllDense => self.text.iter_mut().chain(self.image.iter_mut()).collect(),
        };
        // Check every layer first so a failure leaves the model untouched.
        for d in &layers {
            if d.lora.is_some() {
                return Err(Error::DoubleInjection);
            }
            let limit = d.d_in().min(d.d_out());
            if rank > limit {
                return Err(Error::RankTooLarge { rank, limit });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in layers.iter_mut() {
            d.inject_lora(rank, alpha, &mut rng)?;
        }
        Ok(())
    }

    pub fn merge_lora(&mut self) {
        for d in self.text.iter_mut().chain(self.image.iter_mut()) {
            d.merge_lora();
        }
    }

    /// Push all parameters onto `tape`; only those trained under `mode`
    /// require gradients.
    pub fn bind(&self, tape: &mut Tape, mode: UpdateMode) -> ModelVars {
        let embed_grad = mode.trains(ParamKind::Base);
        ModelVars {
            token_embedding: tape.leaf(self.token_embedding.clone().with_grad(embed_grad)),
            text: self.text.iter().map(|d| d.bind(tape, mode)).collect(),
            image: self.image.iter().map(|d| d.bind(tape, mode)).collect(),
        }
    }

    fn slots_mut(&mut self) -> Vec<(ParamKind, &mut Tensor)> {
        let mut out = vec![(ParamKind::Base, &mut self.token_embedding)];
        for d in self.text.iter_mut().chain(self.image.iter_mut()) {
            out.extend(d.slots_mut());
        }
        out
    }

    fn slots(&self) -> Vec<(ParamKind, &Tensor)> {
        let mut out = vec![(ParamKind::Base, &self.token_embedding)];
        for d in self.text.iter().chain(&self.image) {
            out.extend(d.slots());
        }
        out
    }

    /// Parameters trained under `mode`, paired with their tape leaves in
    /// `vars`, in a fixed order.
    pub fn trainable_mut<'a>(&'a mut self, vars: &ModelVars, mode: UpdateMode) -> Result<Vec<(Var, &'a mut Tensor)>> {
        if mode == UpdateMode::Lora && !self.has_lora() {
            return Err(Error::InvalidArgument("lora update mode needs injected overlays".into()));
        }
        let var_slots = vars.slots();
        let slots = self.slots_mut();
        if var_slots.len() != slots.len() {
            return Err(Error::InvalidArgument("model vars were bound from a different model layout".into()));
        }
        Ok(var_slots
            .into_iter()
            .zip(slots)
            .filter(|((kind, _), _)| mode.trains(*kind))
            .map(|((_, var), (_, tensor))| (var, tensor))
            .collect())
    }

    /// Number of scalar parameters trained under `mode`.
    pub fn trainable_count(&self, mode: UpdateMode) -> usize {
        self.slots()
            .into_iter()
            .filter(|(k, _)| mode.trains(*k))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// SHA-256 over the bit patterns of the base (non-overlay) parameters.
    pub fn base_digest(&self) -> String {
        let mut h = Sha256::new();
        for (kind, t) in self.slots() {
            if kind == ParamKind::Base {
                for v in t.data() {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Text branch from already-embedded token rows `[total, d_tok]`;
    /// `segments[i]` is the half-open row range of sequence `i`. Returns
    /// unit rows `[segments.len(), d_emb]`.
    pub fn text_from_embedded(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        rows: Var,
        segments: Vec<(usize, usize)>,
    ) -> Result<Var> {
        let mut h = rows;
        for block in &vars.text[..2] {
            let z = Dense::forward(tape, block, h)?;
            h = tape.tanh(z)?;
        }
        let pooled = tape.segment_mean(h, segments)?;
        let out = Dense::forward(tape, &vars.text[2], pooled)?;
        tape.l2_normalize(out)
    }

    /// Text branch on token id sequences of length `max_len`. Padding is
    /// dropped before pooling; an all-padding sequence pools the padding
    /// embedding so the output stays defined.
    pub fn text_forward(&self, tape: &mut Tape, vars: &ModelVars, seqs: &[Vec<u32>]) -> Result<Var> {
        if seqs.is_empty() {
            return Err(Error::InvalidArgument("no token sequences to encode".into()));
        }
        let mut ids = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for seq in seqs {
            if seq.len() != self.config.max_len {
                return Err(Error::shape(
                    "encode_text",
                    format!("expected {} tokens, got {}", self.config.max_len, seq.len()),
                ));
            }
            let start = ids.len();
            for &t in seq {
                if t as usize >= self.vocab.len() {
                    return Err(Error::InvalidArgument(format!("token id {t} outside vocabulary")));
                }
                if t != PAD_ID {
                    ids.push(t as usize);
                }
            }
            if ids.len() == start {
                ids.push(PAD_ID as usize);
            }
            segments.push((start, ids.len()));
        }
        let rows = tape.index_select(vars.token_embedding, ids)?;
        self.text_from_embedded(tape, vars, rows, segments)
    }

    pub(crate) fn image_tensor(&self, images: &[&ImageGrid]) -> Result<Tensor> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("no images to encode".into()));
        }
        let c = &self.config;
        let mut data = Vec::with_capacity(images.len() * c.image_len());
        for img in images {
            if img.dims() != (c.image_height, c.image_width, c.image_channels) {
                return Err(Error::shape(
                    "encode_image",
                    format!(
                        "expected {}x{}x{}, got {:?}",
                        c.image_height,
                        c.image_width,
                        c.image_channels,
                        img.dims()
                    ),
                ));
            }
            data.extend(img.data().iter().map(|v| 2.0 * v - 1.0));
        }
        Tensor::matrix(images.len(), c.image_len(), data)
    }

    /// Image branch on a `[batch, h·w·c]` input of centered pixels.
    pub fn image_forward(&self, tape: &mut Tape, vars: &ModelVars, pixels: Var) -> Result<Var> {
        let mut h = pixels;
        for block in &vars.image[..2] {
            let z = Dense::forward(tape, block, h)?;
            h = tape.tanh(z)?;
        }
        let out = Dense::forward(tape, &vars.image[2], h)?;
        tape.l2_normalize(out)
    }

    /// Bind images as a constant input and run the image branch.
    pub fn image_forward_grids(&self, tape: &mut Tape, vars: &ModelVars, images: &[&ImageGrid]) -> Result<Var> {
        let x = tape.constant(self.image_tensor(images)?);
        self.image_forward(tape, vars, x)
    }

    fn rows(t: &Tensor) -> Vec<Vec<f64>> {
        (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
    }

    fn encode_text_chunk(&self, seqs: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, UpdateMode::Frozen);
        let out = self.text_forward(&mut tape, &vars, seqs)?;
        Ok(Self::rows(tape.value(out)))
    }

    fn encode_image_chunk(&self, images: &[&ImageGrid]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, UpdateMode::Frozen);
        let out = self.image_forward_grids(&mut tape, &vars, images)?;
        Ok(Self::rows(tape.value(out)))
    }

    pub fn encode_text(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        Ok(self.encode_text_chunk(&[tokens.to_vec()])?.remove(0))
    }

    pub fn encode_image(&self, image: &ImageGrid) -> Result<Vec<f64>> {
        Ok(self.encode_image_chunk(&[image])?.remove(0))
    }

    /// Encode many sequences, chunked and spread over the worker pool.
    /// Results do not depend on chunking: rows are computed independently.
    pub fn encode_texts(&self, seqs: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let chunks: Vec<&[Vec<u32>]> = seqs.chunks(ENCODE_CHUNK).collect();
        Ok(par::try_map(&chunks, |c| self.encode_text_chunk(c))?.concat())
    }

    pub fn encode_images(&self, images: &[&ImageGrid]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let chunks: Vec<&[&ImageGrid]> = images.chunks(ENCODE_CHUNK).collect();
        Ok(par::try_map(&chunks, |c| self.encode_image_chunk(c))?.concat())
    }

    /// Write a JSON checkpoint. Floats are printed in shortest round-trip
    /// form, so loading restores every parameter bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|e| Error::json(path, e))?;
        std::io::Write::flush(&mut out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let model: DualEncoderModel =
            serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::json(path, e))?;
        model.check_layout().map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        Ok(model)
    }

    fn check_layout(&self) -> Result<()> {
        self.config.validate()?;
        if self.fingerprint != fingerprint(&self.config, &self.vocab) {
            return Err(Error::InvalidArgument("checkpoint fingerprint does not match its config".into()));
        }
        let c = &self.config;
        let expect_embed = [self.vocab.len(), c.d_tok];
        let text_dims = [(c.d_tok, c.d_hidden), (c.d_hidden, c.d_hidden), (c.d_hidden, c.d_emb)];
        let image_dims = [(c.image_len(), c.d_hidden), (c.d_hidden, c.d_hidden), (c.d_hidden, c.d_emb)];
        let layer_ok = |d: &Dense, (i, o): (usize, usize)| {
            d.weight.shape() == [i, o]
                && d.bias.shape() == [o]
                && d.lora.as_ref().is_none_or(|l| {
                    l.rank >= 1 && l.a.shape() == [l.rank, i] && l.b.shape() == [o, l.rank]
                })
        };
        let ok = self.token_embedding.shape() == expect_embed
            && self.text.len() == 3
            && self.image.len() == 3
            && self.text.iter().zip(text_dims).all(|(d, s)| layer_ok(d, s))
            && self.image.iter().zip(image_dims).all(|(d, s)| layer_ok(d, s));
        if !ok {
            return Err(Error::InvalidArgument("checkpoint parameter shapes do not match its config".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tokenize;

    pub(crate) fn tiny() -> DualEncoderModel {
        let vocab = Vocabulary::build(["invasive carcinoma of the breast", "benign normal tissue"]);
        let config = ModelConfig {
            max_len: 6,
            d_tok: 5,
            d_hidden: 7,
            d_emb: 4,
            image_height: 3,
            image_width: 2,
            image_channels: 3,
            init_seed: 11,
        };
        DualEncoderModel::new(config, vocab).unwrap()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn text_embedding_unit_and_deterministic() {
        let m = tiny();
        let t = m.tokenize("invasive carcinoma");
        let a = m.encode_text(&t).unwrap();
        assert_eq!(a.len(), 4);
        assert!((norm(&a) - 1.0).abs() < 1e-9);
        assert_eq!(a, m.encode_text(&t).unwrap());
    }

    #[test]
    fn padding_amount_does_not_matter() {
        let m = tiny();
        let short = tokenize("benign tissue", m.vocab(), 6).unwrap();
        let mut longer_model = m.clone();
        longer_model.config.max_len = 9;
        let long = tokenize("benign tissue", m.vocab(), 9).unwrap();
        assert_eq!(m.encode_text(&short).unwrap(), longer_model.encode_text(&long).unwrap());
    }

    #[test]
    fn masked_mean_pool_oracle() {
        // Recompute the text branch by hand with plain loops.
        let m = tiny();
        let toks = m.tokenize("carcinoma of breast");
        let content: Vec<u32> = toks.iter().copied().filter(|&t| t != PAD_ID).collect();
        let dense = |d: &Dense, x: &[f64]| -> Vec<f64> {
            let (i, o) = (d.d_in(), d.d_out());
            (0..o)
                .map(|j| d.bias.data()[j] + (0..i).map(|k| x[k] * d.weight.data()[k * o + j]).sum::<f64>())
                .collect()
        };
        let mut pooled = vec![0.0; 7];
        for &t in &content {
            let h1: Vec<f64> = dense(&m.text[0], m.token_vector(t)).iter().map(|v| v.tanh()).collect();
            let h2: Vec<f64> = dense(&m.text[1], &h1).iter().map(|v| v.tanh()).collect();
            for (p, v) in pooled.iter_mut().zip(h2) {
                *p += v / content.len() as f64;
            }
        }
        let out = dense(&m.text[2], &pooled);
        let n = norm(&out);
        let got = m.encode_text(&toks).unwrap();
        for (g, o) in got.iter().zip(&out) {
            assert!((g - o / n).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_image_has_unit_embedding() {
        let m = tiny();
        let img = ImageGrid::zeros(3, 2, 3).unwrap();
        let e = m.encode_image(&img).unwrap();
        assert!((norm(&e) - 1.0).abs() < 1e-9);
        assert!(m.encode_image(&ImageGrid::zeros(2, 2, 3).unwrap()).is_err());
    }

    #[test]
    fn batch_encoding_matches_single() {
        let m = tiny();
        let seqs: Vec<Vec<u32>> = (0..150)
            .map(|i| m.tokenize(if i % 3 == 0 { "benign" } else { "invasive breast" }))
            .collect();
        let batch = m.encode_texts(&seqs).unwrap();
        for (s, b) in seqs.iter().zip(&batch).step_by(37) {
            let single = m.encode_text(s).unwrap();
            for (x, y) in single.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lora_injection_preserves_outputs_and_counts() {
        let mut m = tiny();
        let t = m.tokenize("normal tissue");
        let before = m.encode_text(&t).unwrap();
        m.inject_lora(LoraTarget::ProjectionsOnly, 2, 4.0, 3).unwrap();
        assert_eq!(m.encode_text(&t).unwrap(), before);
        // (7 + 4) * 2 per projection
        assert_eq!(m.trainable_count(UpdateMode::Lora), 2 * 22);
        assert!(matches!(
            m.inject_lora(LoraTarget::ProjectionsOnly, 2, 4.0, 3),
            Err(Error::DoubleInjection)
        ));
        let mut fresh = tiny();
        assert!(matches!(
            fresh.inject_lora(LoraTarget::AllDense, 6, 1.0, 0),
            Err(Error::RankTooLarge { rank: 6, limit: 5 })
        ));
        assert!(!fresh.has_lora());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tiny();
        m.inject_lora(LoraTarget::AllDense, 1, 2.0, 5).unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let back = DualEncoderModel::load(&p).unwrap();
        assert_eq!(m.base_digest(), back.base_digest());
        let bits = |m: &DualEncoderModel| -> Vec<u64> {
            m.slots().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&m), bits(&back));
        assert_eq!(m, back);
    }

    #[test]
    fn tampered_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replace("\"max_len\":6", "\"max_len\":7");
        std::fs::write(&p, text).unwrap();
        assert!(DualEncoderModel::load(&p).is_err());
    }
}

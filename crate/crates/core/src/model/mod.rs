//! Tiny bidirectional transformer translation model.
//!
//! One embedding table feeds the encoder and the decoder and (by default)
//! doubles as the output projection. The model exposes exactly what the
//! training loop needs: embedding rows, encoder states, a training step and
//! greedy translation.

mod checkpoint;
mod config;
mod decode;
mod forward;
mod layout;
mod optim;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::ModelConfig;

use crate::corpus::{special, TaggedSentence, TokenId};
use crate::nn::{positions, Gradients, Mat, ParamId, ParamSet, Scalar, Tape};
use crate::{Error, Result};
use forward::{Dropper, Graph};
use layout::Layout;
use optim::Adam;

/// How to initialize a new model.
pub enum Init<'a> {
    /// Every parameter drawn from the seeded initializer.
    Random,
    /// Random init, then the embedding table overwritten by `matrix`
    /// (`vocab_size × d_model`). All other layers stay random.
    FromEmbeddings(&'a Mat<f32>),
    FromCheckpoint(&'a Path),
}

/// One supervised training instance: tagged source and clean target tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub src: TaggedSentence,
    pub tgt: Vec<TokenId>,
}

/// Result of a training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    /// Mean per-token loss over the batch.
    pub loss: f64,
    /// Mean per-token loss of each pair, in batch order.
    pub item_losses: Vec<f64>,
    pub grad_norm: f64,
}

/// Per-token encoder outputs (`len × d_model`), tag positions included.
pub type EncoderStates = Mat<f32>;

/// Model parameters, optimizer state and step counter.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    layout: Layout,
    params: ParamSet<T>,
    optim: Adam<T>,
    step: u64,
    pos: Mat<T>,
    /// Languages this model has been trained on (metadata for finetuning).
    pub languages: Vec<String>,
}

impl<T: Scalar> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.optim == other.optim
            && self.step == other.step
            && self.languages == other.languages
    }
}

impl Model<f32> {
    /// Creates a model; deterministic given `config.seed`.
    pub fn init(config: ModelConfig, init: Init<'_>) -> Result<Self> {
        match init {
            Init::Random => Self::random(config),
            Init::FromEmbeddings(matrix) => {
                let mut model = Self::random(config)?;
                model.set_embeddings(matrix)?;
                Ok(model)
            }
            Init::FromCheckpoint(path) => {
                let model = Self::load(path)?;
                if model.config.vocab_size != config.vocab_size || model.config.d_model != config.d_model {
                    return Err(Error::Checkpoint(format!(
                        "{}: checkpoint shape (vocab {}, d {}) differs from requested (vocab {}, d {})",
                        path.display(),
                        model.config.vocab_size,
                        model.config.d_model,
                        config.vocab_size,
                        config.d_model
                    )));
                }
                Ok(model)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path)
    }

    /// Loads a checkpoint and refuses it unless its vocabulary size matches.
    pub fn load_expecting(path: &Path, vocab_size: usize) -> Result<Self> {
        let m = checkpoint::load(path)?;
        if m.config.vocab_size != vocab_size {
            return Err(Error::Checkpoint(format!(
                "{}: vocab_size {} does not match expected {}",
                path.display(),
                m.config.vocab_size,
                vocab_size
            )));
        }
        Ok(m)
    }
}

impl<T: Scalar> Model<T> {
    pub fn random(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (layout, params) = Layout::build::<T, _>(&config, &mut rng);
        Ok(Self::assemble(config, layout, params))
    }

    fn assemble(config: ModelConfig, layout: Layout, params: ParamSet<T>) -> Self {
        let optim = Adam::new(&params);
        let pos = positions(config.max_len, config.d_model);
        Model {
            config,
            layout,
            params,
            optim,
            step: 0,
            pos,
            languages: Vec::new(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Mutable parameter access; for probes and gradient checks.
    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// The single shared embedding table.
    pub fn embeddings(&self) -> &Mat<T> {
        self.params.get(self.layout.embed)
    }

    pub fn embeddings_mut(&mut self) -> &mut Mat<T> {
        self.params.get_mut(self.layout.embed)
    }

    pub fn embedding_param(&self) -> ParamId {
        self.layout.embed
    }

    pub fn set_embeddings(&mut self, matrix: &Mat<f32>) -> Result<()> {
        let want = (self.config.vocab_size, self.config.d_model);
        if matrix.shape() != want {
            return Err(Error::Shape(format!(
                "embedding matrix is {}x{}, model expects {}x{}",
                matrix.rows(),
                matrix.cols(),
                want.0,
                want.1
            )));
        }
        *self.embeddings_mut() = matrix.cast();
        Ok(())
    }

    /// Copy of this model in another precision (optimizer state reset).
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut m = Model::assemble(self.config.clone(), self.layout.clone(), self.params.cast());
        m.step = self.step;
        m.languages = self.languages.clone();
        m
    }

    fn graph(&self) -> Graph<'_, T> {
        Graph {
            cfg: &self.config,
            layout: &self.layout,
            pos: &self.pos,
        }
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::Data(format!(
                "{what} length {len} exceeds max_len {}",
                self.config.max_len
            )));
        }
        Ok(())
    }

    /// Encoder outputs for one tagged sentence.
    pub fn encode(&self, sentence: &TaggedSentence) -> Result<Mat<T>> {
        let ids = sentence.ids();
        Ok(self.encode_batch(&[&ids])?.pop().expect("one output"))
    }

    /// Encoder outputs for full id sequences (tags included), one matrix each.
    pub fn encode_batch(&self, srcs: &[&[TokenId]]) -> Result<Vec<Mat<T>>> {
        for s in srcs {
            self.check_len(s.len(), "source")?;
        }
        if srcs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(&self.params);
        let (out, segs) = self.graph().encode(&mut tape, srcs, &mut Dropper::off());
        let out = tape.value(out);
        Ok(segs
            .iter()
            .map(|s| {
                let mut m = Mat::zeros(s.len, self.config.d_model);
                for r in 0..s.len {
                    m.row_mut(r).copy_from_slice(out.row(s.start + r));
                }
                m
            })
            .collect())
    }

    fn validate_batch(&self, batch: &[TrainPair]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Data("empty training batch".into()));
        }
        if batch.len() > self.config.max_batch {
            return Err(Error::Data(format!(
                "batch of {} pairs exceeds maximum {}",
                batch.len(),
                self.config.max_batch
            )));
        }
        for p in batch {
            self.check_len(p.src.len(), "source")?;
            self.check_len(p.tgt.len() + 1, "target")?;
        }
        Ok(())
    }

    /// Teacher-forced loss and gradients without touching any state.
    pub fn loss_and_grads(&self, batch: &[TrainPair], dropout_seed: Option<u64>) -> Result<(StepOutput, Gradients<T>)> {
        self.validate_batch(batch)?;
        let srcs: Vec<Vec<TokenId>> = batch.iter().map(|p| p.src.ids()).collect();
        let tgt_in: Vec<Vec<TokenId>> = batch
            .iter()
            .map(|p| {
                let mut v = Vec::with_capacity(p.tgt.len() + 1);
                v.push(special::BOS);
                v.extend_from_slice(&p.tgt);
                v
            })
            .collect();
        let targets: Vec<u32> = batch
            .iter()
            .flat_map(|p| p.tgt.iter().copied().chain(std::iter::once(special::EOS)))
            .collect();
        let src_refs: Vec<&[TokenId]> = srcs.iter().map(Vec::as_slice).collect();
        let tgt_refs: Vec<&[TokenId]> = tgt_in.iter().map(Vec::as_slice).collect();

        let mut drop = match dropout_seed {
            Some(seed) => Dropper::new(self.config.dropout, ChaCha8Rng::seed_from_u64(seed)),
            None => Dropper::off(),
        };
        let graph = self.graph();
        let mut tape = Tape::new(&self.params);
        let (mem, mem_segs) = graph.encode(&mut tape, &src_refs, &mut drop);
        let hidden = graph.decode(&mut tape, mem, &mem_segs, &tgt_refs, &mut drop);
        let logits = graph.logits(&mut tape, hidden);
        let loss_var = tape.cross_entropy(logits, &targets, T::of(self.config.label_smoothing));
        let loss = tape.scalar(loss_var).as_f64();

        let rows = tape.row_losses(loss_var);
        let mut item_losses = Vec::with_capacity(batch.len());
        let mut at = 0;
        for p in batch {
            let n = p.tgt.len() + 1;
            let sum: f64 = rows[at..at + n].iter().map(|x| x.as_f64()).sum();
            item_losses.push(sum / n as f64);
            at += n;
        }
        let grads = tape.backward(loss_var);
        Ok((
            StepOutput {
                loss,
                item_losses,
                grad_norm: grads.sq_norm().sqrt(),
            },
            grads,
        ))
    }

    /// Mean teacher-forced loss without dropout or gradients.
    pub fn eval_loss(&self, batch: &[TrainPair]) -> Result<f64> {
        Ok(self.loss_and_grads(batch, None)?.0.loss)
    }

    /// One optimizer update on `batch` (at most `max_batch` pairs).
    pub fn train_step(&mut self, batch: &[TrainPair]) -> Result<StepOutput> {
        let dropout_seed = self
            .config
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.step);
        let (out, grads) = self.loss_and_grads(batch, Some(dropout_seed))?;
        if !out.loss.is_finite() || !out.grad_norm.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss {} (grad norm {}) at step {} on a batch of {}",
                out.loss,
                out.grad_norm,
                self.step + 1,
                batch.len()
            )));
        }
        self.step += 1;
        self.optim.update(&mut self.params, grads, &self.config, self.step);
        if !self.params.all_finite() {
            return Err(Error::Divergence(format!(
                "parameters became non-finite at step {}",
                self.step
            )));
        }
        Ok(out)
    }

    /// Greedy translation of content tokens from `src_tag` into `tgt_tag`.
    pub fn translate(
        &self,
        tokens: &[TokenId],
        src_tag: TokenId,
        tgt_tag: TokenId,
        max_out_len: usize,
    ) -> Result<Vec<TokenId>> {
        let s = TaggedSentence {
            tokens: tokens.to_vec(),
            src_tag,
            tgt_tag,
            origin: None,
        };
        Ok(self.translate_batch(&[s], max_out_len)?.pop().expect("one output"))
    }

    /// Greedy translation of several tagged sentences at once.
    pub fn translate_batch(&self, sentences: &[TaggedSentence], max_out_len: usize) -> Result<Vec<Vec<TokenId>>> {
        let ids: Vec<Vec<TokenId>> = sentences.iter().map(TaggedSentence::ids).collect();
        for s in &ids {
            self.check_len(s.len(), "source")?;
        }
        let refs: Vec<&[TokenId]> = ids.iter().map(Vec::as_slice).collect();
        let caps = vec![max_out_len; refs.len()];
        Ok(decode::greedy(self, &refs, &caps))
    }

    #[cfg(test)]
    pub(crate) fn incremental(&self, srcs: &[&[TokenId]]) -> decode::Incremental<'_, T> {
        decode::Incremental::new(self, srcs)
    }

    /// Teacher-forced logits for one pair (rows: positions of `BOS + tgt`).
    pub fn forced_logits(&self, src: &[TokenId], tgt_in: &[TokenId]) -> Mat<T> {
        let graph = self.graph();
        let mut tape = Tape::new(&self.params);
        let (mem, segs) = graph.encode(&mut tape, &[src], &mut Dropper::off());
        let h = graph.decode(&mut tape, mem, &segs, &[tgt_in], &mut Dropper::off());
        let l = graph.logits(&mut tape, h);
        tape.value(l).clone()
    }
}

#[cfg(test)]
mod tests;

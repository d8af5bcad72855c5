//! Training: Adam with global-norm clipping, the pretrain/finetune recipe
//! with an 80:20 validation split and plateau early-stopping, and the
//! next-piece language model that warms up the embedding layer.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ItnError, Result};
use crate::tokenize::{PieceVocab, PAD_ID};
use crate::types::LabelRow;

use super::io::quantize_params;
use super::net::{
    backward, backward_direction, forward, loss_from_probs, run_direction, softmax_rows, Batch,
    Params,
};
use super::TaggerModel;

/// One training example: piece ids with one gold label index per task.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub pieces: Vec<u32>,
    pub labels: Vec<[usize; 5]>,
}

/// Expand word-level label rows to piece level: the word-initial piece
/// carries the word's row, continuation pieces get identity with Space=Off.
pub fn example_from_words(
    words: &[&str],
    rows: &[LabelRow],
    vocab: &PieceVocab,
) -> LabeledExample {
    let (pieces, word_of) = vocab.encode_tokens(words);
    let continuation = LabelRow {
        space: crate::types::SpaceClass::Off,
        ..LabelRow::identity()
    };
    let mut labels = Vec::with_capacity(pieces.len());
    let mut prev_word = usize::MAX;
    for &w in &word_of {
        let row = if w != prev_word { rows[w] } else { continuation };
        prev_word = w;
        labels.push(TaggerModel::row_to_indexes(&row));
    }
    LabeledExample { pieces, labels }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub struct Adam {
    m: Params<f32>,
    v: Params<f32>,
    t: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub clip_norm: f32,
}

impl Adam {
    pub fn new(params: &Params<f32>, lr: f32) -> Adam {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }

    pub fn step(&mut self, params: &mut Params<f32>, grads: &mut Params<f32>) {
        let norm = grads.global_norm();
        if norm > self.clip_norm {
            grads.scale(self.clip_norm / norm);
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for name in params.order.clone() {
            let g = grads.get(&name).clone();
            let m = self.m.get_mut(&name);
            m.zip_mut_with(&g, |mv, &gv| *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv);
            let m = m.clone();
            let v = self.v.get_mut(&name);
            v.zip_mut_with(&g, |vv, &gv| {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv
            });
            let v = v.clone();
            let p = params.get_mut(&name);
            ndarray::Zip::from(p)
                .and(&m)
                .and(&v)
                .for_each(|pv, &mv, &vv| {
                    let mhat = mv / b1t;
                    let vhat = vv / b2t;
                    *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

fn batches(examples: &[&LabeledExample], batch_size: usize) -> Vec<Batch<f32>> {
    examples
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let seqs: Vec<(Vec<u32>, Vec<[usize; 5]>)> = chunk
                .iter()
                .map(|e| (e.pieces.clone(), e.labels.clone()))
                .collect();
            Batch::from_sequences(&seqs, PAD_ID)
        })
        .collect()
}

fn eval_set(model: &TaggerModel, examples: &[&LabeledExample]) -> (f64, f64) {
    let mut total_loss = 0.0f64;
    let mut total_tokens = 0.0f64;
    let mut correct = 0u64;
    let mut judged = 0u64;
    for batch in batches(examples, 32) {
        let cache = forward(&model.params, &model.dims, &batch);
        let n = batch.token_count() as f64;
        total_loss += loss_from_probs(&cache, &batch) as f64 * n;
        total_tokens += n;
        let (b, t_len) = batch.ids.dim();
        for task in 0..5 {
            for t in 0..t_len {
                for bi in 0..b {
                    if batch.mask[(bi, t)] > 0.0 {
                        let row = cache.probs[task][t].row(bi);
                        let argmax = row
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                            .map(|(i, _)| i)
                            .unwrap();
                        judged += 1;
                        if argmax == batch.gold[task][(bi, t)] {
                            correct += 1;
                        }
                    }
                }
            }
        }
    }
    (
        if total_tokens > 0.0 {
            total_loss / total_tokens
        } else {
            0.0
        },
        if judged > 0 {
            correct as f64 / judged as f64
        } else {
            0.0
        },
    )
}

fn run_phase(
    model: &mut TaggerModel,
    adam: &mut Adam,
    train_set: &[&LabeledExample],
    val_set: &[&LabeledExample],
    phase: &str,
    epochs: usize,
    patience: usize,
    rng: &mut ChaCha8Rng,
    metrics: &mut Vec<EpochMetrics>,
    log: &mut dyn FnMut(&EpochMetrics),
) {
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Params<f32>> = None;
    let mut stall = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(rng);
        let shuffled: Vec<&LabeledExample> = order.iter().map(|&i| train_set[i]).collect();
        let mut epoch_loss = 0.0f64;
        let mut epoch_tokens = 0.0f64;
        for batch in batches(&shuffled, model.config.batch_size) {
            let cache = forward(&model.params, &model.dims, &batch);
            let n = batch.token_count() as f64;
            epoch_loss += loss_from_probs(&cache, &batch) as f64 * n;
            epoch_tokens += n;
            let mut grads = backward(&model.params, &model.dims, &batch, &cache);
            adam.step(&mut model.params, &mut grads);
        }
        let train_loss = if epoch_tokens > 0.0 {
            epoch_loss / epoch_tokens
        } else {
            0.0
        };
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = eval_set(model, val_set);
            (Some(l), Some(a))
        };
        let entry = EpochMetrics {
            phase: phase.to_string(),
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        };
        log(&entry);
        metrics.push(entry);

        if let Some(vl) = val_loss {
            if vl + 1e-6 < best_val {
                best_val = vl;
                best_params = Some(model.params.clone());
                stall = 0;
            } else {
                stall += 1;
                if stall >= patience {
                    break;
                }
            }
        }
    }
    if let Some(best) = best_params {
        model.params = best;
    }
}

/// The domain-adaptation recipe: pretrain on augmented source pairs with an
/// 80:20 train/validation split and early stopping, then finetune on target
/// pairs. Either set may be empty (but not both). Finishes by quantizing the
/// parameters to f16-representable values so serialization is lossless.
pub fn train(
    model: &mut TaggerModel,
    pretrain: &[LabeledExample],
    finetune: &[LabeledExample],
    mut log: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if pretrain.is_empty() && finetune.is_empty() {
        return Err(ItnError::EmptyDataset(
            "both pretrain and finetune sets are empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    let mut adam = Adam::new(&model.params, model.config.learning_rate as f32);
    let mut metrics = Vec::new();

    if !pretrain.is_empty() {
        let mut order: Vec<usize> = (0..pretrain.len()).collect();
        order.shuffle(&mut rng);
        let val_len = if pretrain.len() >= 5 {
            (pretrain.len() / 5).max(1)
        } else {
            0
        };
        let (val_idx, train_idx) = order.split_at(val_len);
        let train_set: Vec<&LabeledExample> = train_idx.iter().map(|&i| &pretrain[i]).collect();
        let val_set: Vec<&LabeledExample> = val_idx.iter().map(|&i| &pretrain[i]).collect();
        run_phase(
            model,
            &mut adam,
            &train_set,
            &val_set,
            "pretrain",
            model.config.pretrain_epochs,
            model.config.patience,
            &mut rng,
            &mut metrics,
            &mut log,
        );
    }
    if !finetune.is_empty() {
        let train_set: Vec<&LabeledExample> = finetune.iter().collect();
        run_phase(
            model,
            &mut adam,
            &train_set,
            &[],
            "finetune",
            model.config.finetune_epochs,
            model.config.patience,
            &mut rng,
            &mut metrics,
            &mut log,
        );
    }
    quantize_params(&mut model.params);
    Ok(metrics)
}

// ------------------------------------------------------- embedding pretrain

/// Next-piece language model: embedding, one forward LSTM, softmax over the
/// vocabulary. Returns the trained input embedding matrix, which initializes
/// the tagger's embedding layer.
pub fn pretrain_embeddings(
    corpus: &[String],
    vocab: &PieceVocab,
    embed_dim: usize,
    seed: u64,
    epochs: usize,
    lr: f32,
) -> Result<Array2<f32>> {
    let sequences: Vec<Vec<u32>> = corpus
        .iter()
        .map(|line| vocab.encode(line))
        .filter(|ids| ids.len() >= 2)
        .collect();
    if sequences.is_empty() {
        return Err(ItnError::EmptyCorpus(
            "no line tokenizes to two or more pieces".into(),
        ));
    }
    let v = vocab.len();
    let hidden = embed_dim.max(16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| -> Array2<f32> {
        let bound = (6.0 / (rows + cols) as f64).sqrt() as f32;
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
    };
    let mut params: Params<f32> = Params::new();
    params.insert("embed", uniform(v, embed_dim, &mut rng));
    params.insert("lstm.w", uniform(4 * hidden, embed_dim + hidden, &mut rng));
    params.insert("lstm.b", Array2::zeros((1, 4 * hidden)));
    params.insert("out.w", uniform(v, hidden, &mut rng));
    params.insert("out.b", Array2::zeros((1, v)));
    let mut adam = Adam::new(&params, lr);

    let mut order: Vec<usize> = (0..sequences.len()).collect();
    for _epoch in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(16) {
            let seqs: Vec<&Vec<u32>> = chunk.iter().map(|&i| &sequences[i]).collect();
            let (loss, mut grads) = lm_batch_pass(&params, &seqs, hidden, embed_dim);
            debug_assert!(loss.is_finite());
            adam.step(&mut params, &mut grads);
        }
    }
    Ok(params.get("embed").clone())
}

fn lm_batch_pass(
    params: &Params<f32>,
    seqs: &[&Vec<u32>],
    hidden: usize,
    embed_dim: usize,
) -> (f32, Params<f32>) {
    let b = seqs.len();
    let t_len = seqs.iter().map(|s| s.len() - 1).max().unwrap();
    let embed = params.get("embed");
    let mut masks: Vec<Array2<f32>> = Vec::with_capacity(t_len);
    let mut xs: Vec<Array2<f32>> = Vec::with_capacity(t_len);
    let mut targets: Vec<Vec<usize>> = vec![vec![0; b]; t_len];
    let mut input_ids: Vec<Vec<usize>> = vec![vec![0; b]; t_len];
    for t in 0..t_len {
        let mut x = Array2::zeros((b, embed_dim));
        let mut m = Array2::zeros((b, 1));
        for (bi, seq) in seqs.iter().enumerate() {
            if t + 1 < seq.len() {
                let id = seq[t] as usize;
                x.row_mut(bi).assign(&embed.row(id));
                m[(bi, 0)] = 1.0;
                targets[t][bi] = seq[t + 1] as usize;
                input_ids[t][bi] = id;
            }
        }
        xs.push(x);
        masks.push(m);
    }
    let (hs, cache) = run_direction(
        params.get("lstm.w"),
        params.get("lstm.b"),
        &xs,
        &masks,
        false,
    );
    let out_w = params.get("out.w");
    let out_b = params.get("out.b");
    let mut n_tokens = 0.0f32;
    for m in &masks {
        n_tokens += m.sum();
    }
    let mut grads = params.zeros_like();
    let mut dys: Vec<Array2<f32>> = (0..t_len).map(|_| Array2::zeros((b, hidden))).collect();
    let mut loss = 0.0f32;
    {
        let inv_n = 1.0 / n_tokens.max(1.0);
        for t in 0..t_len {
            let mut logits = hs[t].dot(&out_w.t());
            logits += out_b;
            let probs = softmax_rows(&logits);
            let mut dlogits = probs.clone();
            for bi in 0..b {
                if masks[t][(bi, 0)] > 0.0 {
                    let gold = targets[t][bi];
                    loss -= probs[(bi, gold)].max(1e-30).ln();
                    dlogits[(bi, gold)] -= 1.0;
                } else {
                    dlogits.row_mut(bi).fill(0.0);
                }
            }
            dlogits.mapv_inplace(|v| v * inv_n);
            *grads.get_mut("out.w") += &dlogits.t().dot(&hs[t]);
            *grads.get_mut("out.b") += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
            dys[t] += &dlogits.dot(out_w);
        }
        loss *= inv_n;
    }
    let (dw, db, dxs) = backward_direction(params.get("lstm.w"), &cache, &dys, embed_dim);
    *grads.get_mut("lstm.w") += &dw;
    *grads.get_mut("lstm.b") += &db;
    let dembed = grads.get_mut("embed");
    for (t, dx) in dxs.iter().enumerate() {
        for bi in 0..b {
            if masks[t][(bi, 0)] > 0.0 {
                let id = input_ids[t][bi];
                let mut row = dembed.row_mut(id);
                row += &dx.row(bi);
            }
        }
    }
    (loss, grads)
}

//! The tagger network math: embedding lookup, stacked bidirectional LSTM
//! layers, and one two-layer perceptron head per task, with hand-derived
//! backpropagation. Generic over the float type so the gradient-check
//! harness can run the same code at f64.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;

/// Float bound for all network math.
pub trait Scalar: NdFloat + FromPrimitive {}
impl<T: NdFloat + FromPrimitive> Scalar for T {}

/// Named parameter store with a stable ordering.
#[derive(Debug, Clone)]
pub struct Params<F> {
    pub order: Vec<String>,
    pub map: HashMap<String, Array2<F>>,
}

impl<F: Scalar> Params<F> {
    pub fn new() -> Self {
        Params {
            order: Vec::new(),
            map: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Array2<F>) {
        if !self.map.contains_key(name) {
            self.order.push(name.to_string());
        }
        self.map.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &Array2<F> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<F> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn zeros_like(&self) -> Params<F> {
        let mut out = Params::new();
        for name in &self.order {
            out.insert(name, Array2::zeros(self.map[name].raw_dim()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.order.iter().map(|n| self.map[n].len()).sum()
    }

    /// Global L2 norm over every entry.
    pub fn global_norm(&self) -> F {
        let mut total = F::zero();
        for name in &self.order {
            for &v in self.map[name].iter() {
                total = total + v * v;
            }
        }
        total.sqrt()
    }

    pub fn scale(&mut self, factor: F) {
        for name in &self.order {
            self.map.get_mut(name).unwrap().mapv_inplace(|v| v * factor);
        }
    }

    pub fn cast<G: Scalar>(&self) -> Params<G> {
        let mut out = Params::new();
        for name in &self.order {
            out.insert(
                name,
                self.map[name].mapv(|v| G::from_f64(v.to_f64().unwrap()).unwrap()),
            );
        }
        out
    }
}

/// Network dimensions; `hidden` is the bidirectional output width, so each
/// direction runs hidden/2 units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head_hidden: usize,
    pub head_sizes: Vec<usize>,
}

impl NetDims {
    pub fn dir_hidden(&self) -> usize {
        self.hidden / 2
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed
        } else {
            self.hidden
        }
    }
}

pub fn lstm_w(layer: usize, dir: usize) -> String {
    format!("lstm{layer}.{}.w", if dir == 0 { "fwd" } else { "bwd" })
}

pub fn lstm_b(layer: usize, dir: usize) -> String {
    format!("lstm{layer}.{}.b", if dir == 0 { "fwd" } else { "bwd" })
}

pub fn head_names(task: usize) -> (String, String, String, String) {
    (
        format!("head{task}.w1"),
        format!("head{task}.b1"),
        format!("head{task}.w2"),
        format!("head{task}.b2"),
    )
}

/// Uniform init scaled by fan-in + fan-out, deterministic in parameter order.
pub fn init_params<F: Scalar, R: Rng>(dims: &NetDims, rng: &mut R) -> Params<F> {
    let mut params = Params::new();
    let uniform = |rows: usize, cols: usize, rng: &mut R| -> Array2<F> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| {
            F::from_f64(rng.gen_range(-bound..bound)).unwrap()
        })
    };
    params.insert("embed", uniform(dims.vocab, dims.embed, rng));
    let h = dims.dir_hidden();
    for layer in 0..dims.layers {
        let input = dims.layer_input(layer);
        for dir in 0..2 {
            params.insert(&lstm_w(layer, dir), uniform(4 * h, input + h, rng));
            params.insert(&lstm_b(layer, dir), Array2::zeros((1, 4 * h)));
        }
    }
    for (task, &k) in dims.head_sizes.iter().enumerate() {
        let (w1, b1, w2, b2) = head_names(task);
        params.insert(&w1, uniform(dims.head_hidden, dims.hidden, rng));
        params.insert(&b1, Array2::zeros((1, dims.head_hidden)));
        params.insert(&w2, uniform(k, dims.head_hidden, rng));
        params.insert(&b2, Array2::zeros((1, k)));
    }
    params
}

pub fn zero_params<F: Scalar>(dims: &NetDims) -> Params<F> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut params = init_params::<F, _>(dims, &mut rng);
    for name in params.order.clone() {
        params.get_mut(&name).fill(F::zero());
    }
    params
}

/// One padded batch: ids and gold labels are (B, T); mask is 1 for real
/// pieces and 0 for padding.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub ids: Array2<usize>,
    pub mask: Array2<F>,
    /// Gold label index per task, (B, T); ignored where mask is 0.
    pub gold: Vec<Array2<usize>>,
}

impl<F: Scalar> Batch<F> {
    pub fn from_sequences(seqs: &[(Vec<u32>, Vec<[usize; 5]>)], pad_id: u32) -> Batch<F> {
        let b = seqs.len();
        let t_max = seqs.iter().map(|(ids, _)| ids.len()).max().unwrap_or(1);
        let mut ids = Array2::from_elem((b, t_max), pad_id as usize);
        let mut mask = Array2::zeros((b, t_max));
        let mut gold: Vec<Array2<usize>> = (0..5).map(|_| Array2::zeros((b, t_max))).collect();
        for (bi, (seq, labels)) in seqs.iter().enumerate() {
            for (ti, &id) in seq.iter().enumerate() {
                ids[(bi, ti)] = id as usize;
                mask[(bi, ti)] = F::one();
                for task in 0..5 {
                    gold[task][(bi, ti)] = labels[ti][task];
                }
            }
        }
        Batch { ids, mask, gold }
    }

    /// Inference batch with dummy gold labels.
    pub fn from_ids(seqs: &[Vec<u32>], pad_id: u32) -> Batch<F> {
        let labeled: Vec<(Vec<u32>, Vec<[usize; 5]>)> = seqs
            .iter()
            .map(|ids| (ids.clone(), vec![[0usize; 5]; ids.len()]))
            .collect();
        Self::from_sequences(&labeled, pad_id)
    }

    pub fn token_count(&self) -> F {
        self.mask.sum()
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub(crate) struct StepCache<F> {
    z: Array2<F>,
    i: Array2<F>,
    f: Array2<F>,
    g: Array2<F>,
    o: Array2<F>,
    c_prev: Array2<F>,
    tanh_c: Array2<F>,
    mask: Array2<F>,
}

pub(crate) struct DirCache<F> {
    steps: Vec<StepCache<F>>, // indexed by time order of traversal
    times: Vec<usize>,        // actual t per traversal index
}

/// Everything the backward pass needs from one forward run.
pub struct ForwardCache<F> {
    dirs: Vec<Vec<DirCache<F>>>,      // [layer][dir]
    ys: Vec<Array2<F>>,               // encoder output per t, (B, hidden)
    head_a1: Vec<Vec<Array2<F>>>,     // [task][t] relu activations
    pub probs: Vec<Vec<Array2<F>>>,   // [task][t] softmax rows
}

pub(crate) fn run_direction<F: Scalar>(
    w: &Array2<F>,
    b: &Array2<F>,
    inputs: &[Array2<F>],
    masks: &[Array2<F>],
    reverse: bool,
) -> (Vec<Array2<F>>, DirCache<F>) {
    let t_len = inputs.len();
    let batch = inputs[0].nrows();
    let h = w.nrows() / 4;
    let mut h_prev: Array2<F> = Array2::zeros((batch, h));
    let mut c_prev: Array2<F> = Array2::zeros((batch, h));
    let mut outputs: Vec<Array2<F>> = vec![Array2::zeros((batch, h)); t_len];
    let mut steps = Vec::with_capacity(t_len);
    let times: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for &t in &times {
        let z = concatenate![Axis(1), inputs[t], h_prev];
        let mut pre = z.dot(&w.t());
        pre += b;
        let i = pre.slice(s![.., 0..h]).mapv(sigmoid);
        let f = pre.slice(s![.., h..2 * h]).mapv(sigmoid);
        let g = pre.slice(s![.., 2 * h..3 * h]).mapv(|v| v.tanh());
        let o = pre.slice(s![.., 3 * h..4 * h]).mapv(sigmoid);
        let c_hat = &f * &c_prev + &i * &g;
        let tanh_c = c_hat.mapv(|v| v.tanh());
        let h_hat = &o * &tanh_c;
        let m = &masks[t];
        let keep = m.mapv(|v| F::one() - v);
        let h_t = &h_hat * m + &h_prev * &keep;
        let c_t = &c_hat * m + &c_prev * &keep;
        steps.push(StepCache {
            z,
            i,
            f,
            g,
            o,
            c_prev: c_prev.clone(),
            tanh_c,
            mask: m.clone(),
        });
        outputs[t] = h_t.clone();
        h_prev = h_t;
        c_prev = c_t;
    }
    (outputs, DirCache { steps, times })
}

/// Full forward pass. Returns per-task softmax distributions per timestep
/// and the cache for `backward`.
pub fn forward<F: Scalar>(params: &Params<F>, dims: &NetDims, batch: &Batch<F>) -> ForwardCache<F> {
    let (b, t_len) = batch.ids.dim();
    let embed = params.get("embed");
    // Per-timestep column mask (B, 1).
    let masks: Vec<Array2<F>> = (0..t_len)
        .map(|t| {
            batch
                .mask
                .slice(s![.., t..t + 1])
                .to_owned()
        })
        .collect();
    let xs: Vec<Array2<F>> = (0..t_len)
        .map(|t| {
            let mut x = Array2::zeros((b, dims.embed));
            for bi in 0..b {
                let id = batch.ids[(bi, t)];
                x.row_mut(bi).assign(&embed.row(id));
            }
            x
        })
        .collect();

    let mut dirs: Vec<Vec<DirCache<F>>> = Vec::with_capacity(dims.layers);
    let mut current: Vec<Array2<F>> = xs;
    for layer in 0..dims.layers {
        let (fwd_out, fwd_cache) = run_direction(
            params.get(&lstm_w(layer, 0)),
            params.get(&lstm_b(layer, 0)),
            &current,
            &masks,
            false,
        );
        let (bwd_out, bwd_cache) = run_direction(
            params.get(&lstm_w(layer, 1)),
            params.get(&lstm_b(layer, 1)),
            &current,
            &masks,
            true,
        );
        current = (0..t_len)
            .map(|t| concatenate![Axis(1), fwd_out[t], bwd_out[t]])
            .collect();
        dirs.push(vec![fwd_cache, bwd_cache]);
    }
    let ys = current;

    let mut head_a1: Vec<Vec<Array2<F>>> = Vec::with_capacity(dims.head_sizes.len());
    let mut probs: Vec<Vec<Array2<F>>> = Vec::with_capacity(dims.head_sizes.len());
    for task in 0..dims.head_sizes.len() {
        let (w1n, b1n, w2n, b2n) = head_names(task);
        let (w1, b1, w2, b2) = (
            params.get(&w1n),
            params.get(&b1n),
            params.get(&w2n),
            params.get(&b2n),
        );
        let mut a1s = Vec::with_capacity(t_len);
        let mut ps = Vec::with_capacity(t_len);
        for y in &ys {
            let mut a1 = y.dot(&w1.t());
            a1 += b1;
            a1.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
            let mut logits = a1.dot(&w2.t());
            logits += b2;
            ps.push(softmax_rows(&logits));
            a1s.push(a1);
        }
        head_a1.push(a1s);
        probs.push(ps);
    }

    ForwardCache {
        dirs,
        ys,
        head_a1,
        probs,
    }
}

pub fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Multitask loss: summed per-task cross-entropy of the gold labels,
/// averaged over unmasked tokens.
pub fn loss_from_probs<F: Scalar>(cache: &ForwardCache<F>, batch: &Batch<F>) -> F {
    let n = batch.token_count();
    if n == F::zero() {
        return F::zero();
    }
    let (b, t_len) = batch.ids.dim();
    let mut total = F::zero();
    let floor = F::from_f64(1e-30).unwrap();
    for (task, ps) in cache.probs.iter().enumerate() {
        for t in 0..t_len {
            for bi in 0..b {
                if batch.mask[(bi, t)] > F::zero() {
                    let gold = batch.gold[task][(bi, t)];
                    let p = ps[t][(bi, gold)].max(floor);
                    total = total - p.ln();
                }
            }
        }
    }
    total / n
}

/// Backward pass producing gradients for every parameter.
pub fn backward<F: Scalar>(
    params: &Params<F>,
    dims: &NetDims,
    batch: &Batch<F>,
    cache: &ForwardCache<F>,
) -> Params<F> {
    let mut grads = params.zeros_like();
    let (b, t_len) = batch.ids.dim();
    let n = batch.token_count();
    if n == F::zero() {
        return grads;
    }
    let inv_n = F::one() / n;

    // Head backward, accumulating into the encoder output gradient.
    let mut dys: Vec<Array2<F>> = (0..t_len).map(|_| Array2::zeros((b, dims.hidden))).collect();
    for task in 0..dims.head_sizes.len() {
        let (w1n, b1n, w2n, b2n) = head_names(task);
        let w1 = params.get(&w1n);
        let w2 = params.get(&w2n);
        let mut dw1: Array2<F> = Array2::zeros(w1.raw_dim());
        let mut db1: Array2<F> = Array2::zeros(params.get(&b1n).raw_dim());
        let mut dw2: Array2<F> = Array2::zeros(w2.raw_dim());
        let mut db2: Array2<F> = Array2::zeros(params.get(&b2n).raw_dim());
        for t in 0..t_len {
            let mut dlogits = cache.probs[task][t].clone();
            for bi in 0..b {
                if batch.mask[(bi, t)] > F::zero() {
                    let gold = batch.gold[task][(bi, t)];
                    dlogits[(bi, gold)] = dlogits[(bi, gold)] - F::one();
                } else {
                    dlogits.row_mut(bi).fill(F::zero());
                }
            }
            dlogits.mapv_inplace(|v| v * inv_n);
            let a1 = &cache.head_a1[task][t];
            dw2 += &dlogits.t().dot(a1);
            db2 += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut da1 = dlogits.dot(w2);
            // ReLU gate.
            ndarray::Zip::from(&mut da1).and(a1).for_each(|d, &a| {
                if a <= F::zero() {
                    *d = F::zero();
                }
            });
            dw1 += &da1.t().dot(&cache.ys[t]);
            db1 += &da1.sum_axis(Axis(0)).insert_axis(Axis(0));
            dys[t] += &da1.dot(w1);
        }
        *grads.get_mut(&w1n) += &dw1;
        *grads.get_mut(&b1n) += &db1;
        *grads.get_mut(&w2n) += &dw2;
        *grads.get_mut(&b2n) += &db2;
    }

    // BiLSTM backward, top layer first.
    let h = dims.dir_hidden();
    let mut dcurrent = dys;
    for layer in (0..dims.layers).rev() {
        let input_dim = dims.layer_input(layer);
        let mut dinputs: Vec<Array2<F>> =
            (0..t_len).map(|_| Array2::zeros((b, input_dim))).collect();
        for dir in 0..2 {
            let w = params.get(&lstm_w(layer, dir));
            let dys_dir: Vec<Array2<F>> = dcurrent
                .iter()
                .map(|dy| dy.slice(s![.., dir * h..(dir + 1) * h]).to_owned())
                .collect();
            let (dw, db, dins) =
                backward_direction(w, &cache.dirs[layer][dir], &dys_dir, input_dim);
            for (t, d) in dins.into_iter().enumerate() {
                dinputs[t] += &d;
            }
            *grads.get_mut(&lstm_w(layer, dir)) += &dw;
            *grads.get_mut(&lstm_b(layer, dir)) += &db;
        }
        dcurrent = dinputs;
    }

    // Embedding scatter.
    let dembed = grads.get_mut("embed");
    for (t, dx) in dcurrent.iter().enumerate() {
        for bi in 0..b {
            let id = batch.ids[(bi, t)];
            let mut row = dembed.row_mut(id);
            row += &dx.row(bi);
        }
    }
    grads
}

/// Backward through one LSTM direction given the per-timestep output
/// gradients for that direction. Returns (dW, db, dInputs).
pub(crate) fn backward_direction<F: Scalar>(
    w: &Array2<F>,
    cache_dir: &DirCache<F>,
    dys: &[Array2<F>],
    input_dim: usize,
) -> (Array2<F>, Array2<F>, Vec<Array2<F>>) {
    let t_len = dys.len();
    let b = dys[0].nrows();
    let h = w.nrows() / 4;
    let mut dw: Array2<F> = Array2::zeros(w.raw_dim());
    let mut db: Array2<F> = Array2::zeros((1, 4 * h));
    let mut dinputs: Vec<Array2<F>> = (0..t_len).map(|_| Array2::zeros((b, input_dim))).collect();
    let mut dh_carry: Array2<F> = Array2::zeros((b, h));
    let mut dc_carry: Array2<F> = Array2::zeros((b, h));
    // Traverse opposite to the forward order of this direction.
    for step_idx in (0..cache_dir.times.len()).rev() {
        let t = cache_dir.times[step_idx];
        let step = &cache_dir.steps[step_idx];
        let dh_total = &dys[t] + &dh_carry;
        let dc_total = dc_carry.clone();
        let m = &step.mask;
        let keep = m.mapv(|v| F::one() - v);
        let dh_hat = &dh_total * m;
        let dc_hat = &dc_total * m;
        let dh_skip = &dh_total * &keep;
        let dc_skip = &dc_total * &keep;

        let done = &dh_hat * &step.tanh_c;
        let dpre_o = &done * &step.o.mapv(|v| v * (F::one() - v));
        let dc = &dc_hat + &(&dh_hat * &step.o * &step.tanh_c.mapv(|v| F::one() - v * v));
        let df = &dc * &step.c_prev;
        let dpre_f = &df * &step.f.mapv(|v| v * (F::one() - v));
        let di = &dc * &step.g;
        let dpre_i = &di * &step.i.mapv(|v| v * (F::one() - v));
        let dg = &dc * &step.i;
        let dpre_g = &dg * &step.g.mapv(|v| F::one() - v * v);

        let dpre = concatenate![Axis(1), dpre_i, dpre_f, dpre_g, dpre_o];
        dw += &dpre.t().dot(&step.z);
        db += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dz = dpre.dot(w);
        dinputs[t] += &dz.slice(s![.., 0..input_dim]);
        dh_carry = dz.slice(s![.., input_dim..]).to_owned() + dh_skip;
        dc_carry = &dc * &step.f + &dc_skip;
    }
    (dw, db, dinputs)
}

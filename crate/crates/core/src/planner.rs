//! Content planner: slot embedding, BiLSTM table encoding, linear-chain
//! CRF scoring and loss, Viterbi decoding, and plan assembly.
//!
//! Each table slot embeds as a convex mix of its mean key embedding and
//! mean value embedding. A BiLSTM over the slot sequence produces one
//! hidden state per slot (forward and backward halves concatenated). The
//! CRF assigns each slot either the unselected label or a rank; decoding
//! the best label sequence and sorting the selected slots by rank yields
//! the content plan fed to the generator.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::table::{
    extract_plan_labels, AliasTable, PlanLabels, Record, Slot, Table, Vocab, NO_LABEL,
};
use crate::tensor::{concat, embedding, Result as TResult, Tape, Tensor, TensorError};
use crate::train::{
    accumulate_grads, clip_global_norm, uniform_init, AdamW, ParamStore, TapeParams, TrainError,
};

/// One selected slot of a content plan, in plan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanEntry {
    pub slot: usize,
    pub key: Vec<String>,
}

/// The ordered key sequence the generator is conditioned on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContentPlan {
    pub entries: Vec<PlanEntry>,
}

impl ContentPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Plan keys flattened to one token sequence.
    pub fn flat_tokens(&self) -> Vec<String> {
        self.entries
            .iter()
            .flat_map(|e| e.key.iter().cloned())
            .collect()
    }

    /// One space-joined string per key.
    pub fn key_strings(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.key.join(" ")).collect()
    }
}

/// Drop unselected slots and order the rest by (label, slot index); the
/// slot index tiebreak repairs duplicate predicted ranks deterministically.
pub fn labels_to_plan(labels: &PlanLabels, table: &Table) -> ContentPlan {
    let mut picked: Vec<(usize, usize)> = labels
        .0
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != NO_LABEL)
        .map(|(i, &l)| (l, i))
        .collect();
    picked.sort_unstable();
    ContentPlan {
        entries: picked
            .into_iter()
            .map(|(_, i)| PlanEntry {
                slot: i,
                key: table.slots[i].key.clone(),
            })
            .collect(),
    }
}

/// Fraction of positions where predicted and gold labels agree, averaged
/// over instances.
pub fn plan_accuracy(pred: &[PlanLabels], gold: &[PlanLabels]) -> TResult<f64> {
    if pred.len() != gold.len() {
        return Err(TensorError::Contract(format!(
            "plan_accuracy: {} predictions vs {} golds",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(TensorError::Contract("plan_accuracy: empty lists".into()));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(TensorError::Contract(format!(
                "plan_accuracy: instance lengths {} vs {}",
                p.len(),
                g.len()
            )));
        }
        let hits = p.0.iter().zip(&g.0).filter(|(a, b)| a == b).count();
        total += hits as f64 / p.len() as f64;
    }
    Ok(total / pred.len() as f64)
}

/// BiLSTM-CRF planner. Label alphabet: 0 = unselected, 1..=rank_cap =
/// summary rank; two extra bookkeeping states (start/stop) index only the
/// transition matrix.
pub struct PlannerModel {
    pub vocab: Vocab,
    pub store: ParamStore,
    pub d_embed: usize,
    pub lambda: f64,
    pub rank_cap: usize,
}

impl PlannerModel {
    pub fn n_labels(&self) -> usize {
        self.rank_cap + 1
    }

    fn start_state(&self) -> usize {
        self.n_labels()
    }

    fn stop_state(&self) -> usize {
        self.n_labels() + 1
    }

    fn n_states(&self) -> usize {
        self.n_labels() + 2
    }

    pub fn new(cfg: &TrainConfig, vocab: Vocab, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_embed;
        let h = d / 2;
        let k = cfg.rank_cap + 1;
        let mut store = ParamStore::new();
        store.add(
            "plan.emb",
            &[vocab.len(), d],
            uniform_init(rng, vocab.len() * d, -0.1, 0.1),
            true,
        );
        let lstm_scale = 1.0 / (h as f64).sqrt();
        for dir in ["fwd", "bwd"] {
            store.add(
                &format!("plan.lstm.{dir}.w"),
                &[d + h, 4 * h],
                uniform_init(rng, (d + h) * 4 * h, -lstm_scale, lstm_scale),
                true,
            );
            // forget-gate bias starts at +1
            let mut bias = vec![0.0; 4 * h];
            bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
            store.add(&format!("plan.lstm.{dir}.b"), &[4 * h], bias, true);
        }
        let emit_scale = 1.0 / (d as f64).sqrt();
        store.add(
            "plan.crf.emit",
            &[d, k],
            uniform_init(rng, d * k, -emit_scale, emit_scale),
            true,
        );
        let states = k + 2;
        store.add(
            "plan.crf.trans",
            &[states, states],
            uniform_init(rng, states * states, -0.01, 0.01),
            true,
        );
        PlannerModel {
            vocab,
            store,
            d_embed: d,
            lambda: cfg.lambda,
            rank_cap: cfg.rank_cap,
        }
    }

    pub fn from_parts(cfg: &TrainConfig, vocab: Vocab, store: ParamStore) -> Self {
        PlannerModel {
            vocab,
            store,
            d_embed: cfg.d_embed,
            lambda: cfg.lambda,
            rank_cap: cfg.rank_cap,
        }
    }

    /// Transition score with the structural constraints made explicit:
    /// transitions into start and out of stop are impossible.
    pub fn transition_score(&self, from: usize, to: usize) -> f64 {
        if to == self.start_state() || from == self.stop_state() {
            return f64::NEG_INFINITY;
        }
        let s = self.n_states();
        self.store.get("plan.crf.trans").data[from * s + to]
    }

    /// Slot embedding: λ·mean(key embeddings) + (1−λ)·mean(value
    /// embeddings); an empty value contributes a zero vector.
    pub fn embed_slot(&self, tp: &TapeParams, slot: &Slot) -> TResult<Tensor> {
        let emb = tp.get("plan.emb")?;
        let key_ids = self.vocab.encode(&slot.key);
        let key_mean = mean_rows(tp.tape, &embedding(&emb, &key_ids)?)?;
        let key_part = key_mean.scale(self.lambda)?;
        if slot.value.is_empty() {
            return key_part.add(&tp.tape.zeros(&[1, self.d_embed], false)?);
        }
        let val_ids = self.vocab.encode(&slot.value);
        let val_mean = mean_rows(tp.tape, &embedding(&emb, &val_ids)?)?;
        key_part.add(&val_mean.scale(1.0 - self.lambda)?)
    }

    /// BiLSTM over the slot embeddings; row i is the concatenation of the
    /// forward and backward hidden states at slot i.
    pub fn encode_table(&self, tp: &TapeParams, table: &Table) -> TResult<Tensor> {
        let n = table.len();
        let embeds: Vec<Tensor> = table
            .slots
            .iter()
            .map(|s| self.embed_slot(tp, s))
            .collect::<TResult<_>>()?;
        let fwd = self.lstm_direction(tp, &embeds, "fwd", false)?;
        let bwd = self.lstm_direction(tp, &embeds, "bwd", true)?;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            rows.push(concat(&[&fwd[i], &bwd[i]], 1)?);
        }
        let row_refs: Vec<&Tensor> = rows.iter().collect();
        concat(&row_refs, 0)
    }

    fn lstm_direction(
        &self,
        tp: &TapeParams,
        embeds: &[Tensor],
        dir: &str,
        reverse: bool,
    ) -> TResult<Vec<Tensor>> {
        let h = self.d_embed / 2;
        let w = tp.get(&format!("plan.lstm.{dir}.w"))?;
        let b = tp.get(&format!("plan.lstm.{dir}.b"))?;
        let mut hidden = tp.tape.zeros(&[1, h], false)?;
        let mut cell = tp.tape.zeros(&[1, h], false)?;
        let mut out = vec![None; embeds.len()];
        let order: Vec<usize> = if reverse {
            (0..embeds.len()).rev().collect()
        } else {
            (0..embeds.len()).collect()
        };
        for i in order {
            let xh = concat(&[&embeds[i], &hidden], 1)?;
            let z = xh.matmul(&w)?.add(&b)?;
            let gi = z.slice_cols(0, h)?.sigmoid()?;
            let gf = z.slice_cols(h, 2 * h)?.sigmoid()?;
            let gg = z.slice_cols(2 * h, 3 * h)?.tanh()?;
            let go = z.slice_cols(3 * h, 4 * h)?.sigmoid()?;
            cell = gf.mul(&cell)?.add(&gi.mul(&gg)?)?;
            hidden = go.mul(&cell.tanh()?)?;
            out[i] = Some(hidden.clone());
        }
        Ok(out.into_iter().map(|t| t.unwrap()).collect())
    }

    /// Per-slot label scores: H · W_emit, one row per slot.
    pub fn emissions(&self, tp: &TapeParams, hidden: &Tensor) -> TResult<Tensor> {
        hidden.matmul(&tp.get("plan.crf.emit")?)
    }

    /// Chain score of one label sequence: emission picks plus transitions,
    /// including start→l₁ and lₙ→stop.
    pub fn crf_score(
        &self,
        tp: &TapeParams,
        hidden: &Tensor,
        labels: &PlanLabels,
    ) -> TResult<Tensor> {
        let n = hidden.shape()[0];
        if labels.len() != n {
            return Err(TensorError::Contract(format!(
                "crf_score: {} labels for {} slots",
                labels.len(),
                n
            )));
        }
        let k = self.n_labels();
        for &l in &labels.0 {
            if l >= k {
                return Err(TensorError::Contract(format!(
                    "label {l} out of range (max {})",
                    k - 1
                )));
            }
        }
        let emis = self.emissions(tp, hidden)?;
        let mut emis_mask = vec![0.0; n * k];
        for (i, &l) in labels.0.iter().enumerate() {
            emis_mask[i * k + l] = 1.0;
        }
        let emis_mask = tp.tape.tensor(emis_mask, &[n, k], false)?;
        let emit_term = emis.mul(&emis_mask)?.sum_all()?;

        let states = self.n_states();
        let mut trans_mask = vec![0.0; states * states];
        let mut prev = self.start_state();
        for &l in &labels.0 {
            trans_mask[prev * states + l] += 1.0;
            prev = l;
        }
        trans_mask[prev * states + self.stop_state()] += 1.0;
        let trans_mask = tp.tape.tensor(trans_mask, &[states, states], false)?;
        let trans = tp.get("plan.crf.trans")?;
        let trans_term = trans.mul(&trans_mask)?.sum_all()?;
        emit_term.add(&trans_term)
    }

    /// Log of the partition function by the forward algorithm in log
    /// space.
    pub fn crf_log_partition(&self, tp: &TapeParams, hidden: &Tensor) -> TResult<Tensor> {
        let n = hidden.shape()[0];
        let k = self.n_labels();
        let emis = self.emissions(tp, hidden)?;
        let trans = tp.get("plan.crf.trans")?;
        let inner = trans.slice_rows(0, k)?.slice_cols(0, k)?;
        let inner_t = inner.transpose()?;
        let start_row = trans
            .slice_rows(self.start_state(), self.start_state() + 1)?
            .slice_cols(0, k)?;
        let stop_col = trans
            .slice_rows(0, k)?
            .slice_cols(self.stop_state(), self.stop_state() + 1)?
            .transpose()?;
        let mut alpha = emis.slice_rows(0, 1)?.add(&start_row)?;
        for t in 1..n {
            // u[j, i] = trans[i, j] + alpha[i]; logsumexp over i
            let u = inner_t.add(&alpha)?;
            let reduced = u.logsumexp(1)?.transpose()?;
            alpha = reduced.add(&emis.slice_rows(t, t + 1)?)?;
        }
        alpha.add(&stop_col)?.logsumexp(1)
    }

    /// Negative log-likelihood of the gold labels: log Z − score(gold).
    pub fn crf_loss(
        &self,
        tp: &TapeParams,
        hidden: &Tensor,
        gold: &PlanLabels,
    ) -> TResult<Tensor> {
        let log_z = self.crf_log_partition(tp, hidden)?;
        let score = self.crf_score(tp, hidden, gold)?;
        log_z.sub(&score)
    }

    /// Full loss for one record from raw inputs.
    pub fn record_loss(
        &self,
        tp: &TapeParams,
        table: &Table,
        gold: &PlanLabels,
    ) -> TResult<Tensor> {
        let hidden = self.encode_table(tp, table)?;
        self.crf_loss(tp, &hidden, gold)
    }

    /// Best label sequence by the first-order Viterbi algorithm. Ties
    /// break toward the lower label index.
    pub fn viterbi_decode(&self, emissions: &[f64], n: usize) -> PlanLabels {
        let k = self.n_labels();
        assert_eq!(emissions.len(), n * k);
        let states = self.n_states();
        let trans = self.store.get("plan.crf.trans").data.clone();
        let tr = |from: usize, to: usize| trans[from * states + to];

        let mut score = vec![f64::NEG_INFINITY; n * k];
        let mut back = vec![0usize; n * k];
        for l in 0..k {
            score[l] = emissions[l] + tr(self.start_state(), l);
        }
        for t in 1..n {
            for l in 0..k {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for prev in 0..k {
                    let cand = score[(t - 1) * k + prev] + tr(prev, l);
                    if cand > best {
                        best = cand;
                        arg = prev;
                    }
                }
                score[t * k + l] = best + emissions[t * k + l];
                back[t * k + l] = arg;
            }
        }
        let mut best = f64::NEG_INFINITY;
        let mut last = 0;
        for l in 0..k {
            let cand = score[(n - 1) * k + l] + tr(l, self.stop_state());
            if cand > best {
                best = cand;
                last = l;
            }
        }
        let mut labels = vec![0usize; n];
        labels[n - 1] = last;
        for t in (1..n).rev() {
            labels[t - 1] = back[t * k + labels[t]];
        }
        PlanLabels(labels)
    }

    /// Run the encoder and Viterbi-decode the labels for one table.
    pub fn predict(&self, table: &Table) -> TResult<PlanLabels> {
        let tape = Tape::new();
        let tp = TapeParams::new(&tape, &self.store);
        let hidden = self.encode_table(&tp, table)?;
        let emis = self.emissions(&tp, &hidden)?;
        Ok(self.viterbi_decode(&emis.data(), table.len()))
    }

    /// Predict labels and assemble the content plan.
    pub fn plan(&self, table: &Table) -> TResult<ContentPlan> {
        Ok(labels_to_plan(&self.predict(table)?, table))
    }
}

/// Mean over the rows of a rank-2 tensor, kept as a [1×d] row.
fn mean_rows(tape: &Tape, x: &Tensor) -> TResult<Tensor> {
    let rows = x.shape()[0];
    let ones = tape.tensor(vec![1.0 / rows as f64; rows], &[1, rows], false)?;
    ones.matmul(x)
}

/// Re-cap gold labels for a smaller planner label space: ranks beyond the
/// cap fall back to unselected.
fn recap_labels(labels: &PlanLabels, cap: usize) -> PlanLabels {
    PlanLabels(
        labels
            .0
            .iter()
            .map(|&l| if l > cap { NO_LABEL } else { l })
            .collect(),
    )
}

/// Gold labels for a record under this planner's rank cap.
pub fn gold_labels(record: &Record, aliases: &AliasTable, cap: usize) -> PlanLabels {
    recap_labels(
        &extract_plan_labels(&record.table, &record.summary, aliases),
        cap,
    )
}

/// Train a planner from scratch on a record set. Returns the model and
/// the per-epoch mean loss trace.
pub fn train_planner(
    records: &[Record],
    vocab: Vocab,
    cfg: &TrainConfig,
) -> Result<(PlannerModel, Vec<f64>), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = PlannerModel::new(cfg, vocab, &mut rng);
    let trace = train_planner_from(&mut model, records, cfg, |_, _| true)?;
    Ok((model, trace))
}

/// Training loop over an existing planner. `on_epoch(epoch, loss)` may
/// stop early by returning false.
pub fn train_planner_from(
    model: &mut PlannerModel,
    records: &[Record],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64) -> bool,
) -> Result<Vec<f64>, TrainError> {
    if records.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    let aliases = AliasTable::builtin();
    let golds: Vec<PlanLabels> = records
        .iter()
        .map(|r| gold_labels(r, &aliases, model.rank_cap))
        .collect();
    let mut optim = AdamW::new(cfg.lr_planner, cfg.weight_decay);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let order = {
            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..records.len()).collect();
            idx.shuffle(&mut rng);
            idx
        };
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: HashMap<String, Vec<f64>> = HashMap::new();
            for &i in batch {
                let tape = Tape::new();
                let tp = TapeParams::new(&tape, &model.store);
                let loss = model
                    .record_loss(&tp, &records[i].table, &golds[i])
                    .map_err(|e| match e {
                        TensorError::NonFinite { op } => {
                            TrainError::Diverged(format!("non-finite value in {op}"))
                        }
                        other => TrainError::Tensor(other),
                    })?;
                epoch_loss += loss.item();
                loss.backward()?;
                accumulate_grads(&mut grads, tp.grads());
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grads.values_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            optim.step(&mut model.store, &grads)?;
        }
        let mean = epoch_loss / records.len() as f64;
        trace.push(mean);
        if !on_epoch(epoch, mean) {
            break;
        }
    }
    Ok(trace)
}

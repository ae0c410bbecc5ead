use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SplitTag, Splits, TelemetryDataset};
use crate::error::{Error, Result};

/// Input length `l`, forecast horizon `h`, start stride `stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub l: usize,
    pub h: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(l: usize, h: usize, stride: usize) -> Result<Self> {
        if l == 0 || h == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "window parameters must be positive (L={l}, H={h}, S={stride})"
            )));
        }
        Ok(Self { l, h, stride })
    }

    pub fn span(&self) -> usize {
        self.l + self.h
    }
}

/// One window: NE position in the dataset, first input row, and its split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub ne: usize,
    pub t0: usize,
    pub split: SplitTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowIndex {
    pub spec: WindowSpec,
    pub entries: Vec<WindowEntry>,
}

impl WindowIndex {
    pub fn of(&self, split: SplitTag) -> Vec<WindowEntry> {
        self.entries.iter().filter(|e| e.split == split).copied().collect()
    }

    pub fn count(&self, split: SplitTag) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

/// Enumerates window starts inside each split block so that input and target
/// rows never leave the block.
pub fn enumerate_windows(ds: &TelemetryDataset, splits: &Splits, spec: WindowSpec) -> Result<WindowIndex> {
    let spec = WindowSpec::new(spec.l, spec.h, spec.stride)?;
    let mut entries = Vec::new();
    for (n, ne) in ds.nes.iter().enumerate() {
        let b = splits
            .get(&ne.ne_id)
            .ok_or_else(|| Error::Contract(format!("no split for {}", ne.ne_id)))?;
        let t_len = ds.series_len(n);
        for split in SplitTag::ALL {
            let block = b.block(split);
            let end = block.end.min(t_len);
            let mut t0 = block.start;
            while t0 + spec.span() <= end {
                entries.push(WindowEntry { ne: n, t0, split });
                t0 += spec.stride;
            }
        }
    }
    Ok(WindowIndex { spec, entries })
}

/// Dense arrays for `b` windows. Real tensors are row-major `b x len x k`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub b: usize,
    pub l: usize,
    pub h: usize,
    pub k: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub input_mask: Vec<u8>,
    pub target_mask: Vec<u8>,
    /// `b x l x d_dyn` codes.
    pub dyn_ctx: Vec<u32>,
    pub d_dyn: usize,
    /// `b x d_stat` codes.
    pub static_codes: Vec<u32>,
    pub d_stat: usize,
    /// `b x d_real` scaled static reals.
    pub static_real: Vec<f64>,
    pub d_real: usize,
    pub provenance: Vec<WindowEntry>,
}

impl WindowBatch {
    /// Gathers the given windows from an encoded dataset.
    pub fn gather(ds: &TelemetryDataset, spec: WindowSpec, entries: &[WindowEntry]) -> Result<Self> {
        Self::gather_impl(ds, spec, entries, false)
    }

    /// Like [`WindowBatch::gather`], but target rows past the end of the series
    /// are zero-filled and masked. Used for inference near the end of a block.
    pub fn gather_padded(ds: &TelemetryDataset, spec: WindowSpec, entries: &[WindowEntry]) -> Result<Self> {
        Self::gather_impl(ds, spec, entries, true)
    }

    fn gather_impl(ds: &TelemetryDataset, spec: WindowSpec, entries: &[WindowEntry], pad: bool) -> Result<Self> {
        if !ds.encoded {
            return Err(Error::Contract("windows require a scaled and encoded dataset".into()));
        }
        let (k, l, h) = (ds.k(), spec.l, spec.h);
        let d_dyn = ds.d_dyn();
        let d_stat = ds.static_cat_names.len();
        let d_real = ds.static_real_names.len();
        let b = entries.len();
        let mut out = WindowBatch {
            b,
            l,
            h,
            k,
            inputs: Vec::with_capacity(b * l * k),
            targets: Vec::with_capacity(b * h * k),
            input_mask: Vec::with_capacity(b * l * k),
            target_mask: Vec::with_capacity(b * h * k),
            dyn_ctx: Vec::with_capacity(b * l * d_dyn),
            d_dyn,
            static_codes: Vec::with_capacity(b * d_stat),
            d_stat,
            static_real: Vec::with_capacity(b * d_real),
            d_real,
            provenance: entries.to_vec(),
        };
        for e in entries {
            let ne = &ds.nes[e.ne];
            let t_len = ds.series_len(e.ne);
            if e.t0 + l > t_len || (!pad && e.t0 + l + h > t_len) {
                return Err(Error::Contract(format!("window at {} runs past {}", e.t0, ne.ne_id)));
            }
            let inp = e.t0 * k..(e.t0 + l) * k;
            let tgt_end = (e.t0 + l + h).min(t_len);
            let tgt = (e.t0 + l) * k..tgt_end * k;
            let missing = (e.t0 + l + h - tgt_end) * k;
            out.inputs.extend_from_slice(&ne.x[inp.clone()]);
            out.input_mask.extend_from_slice(&ne.mask[inp]);
            out.targets.extend_from_slice(&ne.x[tgt.clone()]);
            out.targets.extend(std::iter::repeat_n(0.0, missing));
            out.target_mask.extend_from_slice(&ne.mask[tgt]);
            out.target_mask.extend(std::iter::repeat_n(1, missing));
            out.dyn_ctx
                .extend_from_slice(&ne.z[e.t0 * d_dyn..(e.t0 + l) * d_dyn]);
            out.static_codes.extend_from_slice(&ne.s);
            out.static_real.extend_from_slice(&ne.static_real);
        }
        Ok(out)
    }
}

/// Lazily assembled mini-batches over one split.
pub struct Batches<'a> {
    ds: &'a TelemetryDataset,
    spec: WindowSpec,
    order: Vec<WindowEntry>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn len(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[WindowEntry] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<WindowBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let chunk = &self.order[self.pos..end];
        self.pos = end;
        Some(WindowBatch::gather(self.ds, self.spec, chunk))
    }
}

/// Every window of `split` exactly once, shuffled when a seed is given.
pub fn assemble_batches<'a>(
    ds: &'a TelemetryDataset,
    index: &WindowIndex,
    split: SplitTag,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order = index.of(split);
    if order.is_empty() {
        return Err(Error::Contract(format!("no {} windows", split.as_str())));
    }
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(Batches {
        ds,
        spec: index.spec,
        order,
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split::split_len;
    use crate::data::{apply_scalers, fit_scalers, EncoderFit, NeSeries, SplitBounds};
    use proptest::prelude::*;

    fn raw(t: usize) -> TelemetryDataset {
        TelemetryDataset {
            cadence_minutes: 15,
            feature_names: vec!["a".into(), "b".into()],
            dyn_cat_names: vec![],
            static_cat_names: vec![],
            static_real_names: vec![],
            nes: vec![NeSeries {
                ne_id: "n".into(),
                start: 0,
                x: (0..t * 2).map(|i| i as f64).collect(),
                mask: vec![0; t * 2],
                dyn_cat: vec![],
                static_cat: vec![],
                static_real: vec![],
                z: vec![],
                s: vec![],
            }],
            encoded: false,
        }
    }

    fn one_block(t: usize) -> Splits {
        let mut s = Splits::default();
        s.insert(
            "n".into(),
            SplitBounds {
                train: 0..t,
                val: t..t,
                test: t..t,
            },
        );
        s
    }

    #[test]
    fn stride_one_and_four() {
        let ds = raw(10);
        let idx = enumerate_windows(&ds, &one_block(10), WindowSpec::new(4, 2, 1).unwrap()).unwrap();
        let t0s: Vec<usize> = idx.entries.iter().map(|e| e.t0).collect();
        assert_eq!(t0s, vec![0, 1, 2, 3, 4]);
        let idx = enumerate_windows(&ds, &one_block(10), WindowSpec::new(4, 2, 4).unwrap()).unwrap();
        let t0s: Vec<usize> = idx.entries.iter().map(|e| e.t0).collect();
        assert_eq!(t0s, vec![0, 4]);
    }

    #[test]
    fn short_block_has_no_windows() {
        let ds = raw(5);
        let idx = enumerate_windows(&ds, &one_block(5), WindowSpec::new(4, 2, 1).unwrap()).unwrap();
        assert!(idx.entries.is_empty());
    }

    fn encoded(t: usize) -> (TelemetryDataset, Splits) {
        let ds = raw(t);
        let sp = one_block(t);
        let (sc, enc) = fit_scalers(&ds, &sp, EncoderFit::AllRows).unwrap();
        (apply_scalers(&ds, &sc, &enc).unwrap(), sp)
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let (ds, sp) = encoded(10);
        let idx = enumerate_windows(&ds, &sp, WindowSpec::new(4, 2, 1).unwrap()).unwrap();
        let sizes: Vec<usize> = assemble_batches(&ds, &idx, SplitTag::Train, 2, None)
            .unwrap()
            .map(|b| b.unwrap().b)
            .collect();
        assert_eq!(sizes, vec![2, 2, 1]);

        let (ds, sp) = encoded(40);
        let idx = enumerate_windows(&ds, &sp, WindowSpec::new(4, 2, 1).unwrap()).unwrap();
        let a = assemble_batches(&ds, &idx, SplitTag::Train, 4, Some(7)).unwrap();
        let b = assemble_batches(&ds, &idx, SplitTag::Train, 4, Some(7)).unwrap();
        let c = assemble_batches(&ds, &idx, SplitTag::Train, 4, Some(8)).unwrap();
        assert_eq!(a.order(), b.order());
        assert_ne!(a.order(), c.order());
    }

    #[test]
    fn batch_contents_line_up() {
        let (ds, sp) = encoded(10);
        let idx = enumerate_windows(&ds, &sp, WindowSpec::new(4, 2, 1).unwrap()).unwrap();
        let batch = assemble_batches(&ds, &idx, SplitTag::Train, 8, None)
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        assert_eq!(batch.inputs.len(), 5 * 4 * 2);
        assert_eq!(batch.targets.len(), 5 * 2 * 2);
        assert_eq!(batch.dyn_ctx.len(), 5 * 4 * 2);
        // window 1 target starts at row 5
        let row5 = &ds.nes[0].x[10..12];
        assert_eq!(&batch.targets[4..6], row5);
    }

    proptest! {
        #[test]
        fn windows_stay_inside_blocks(
            t in 12usize..200, l in 1usize..10, h in 1usize..5, s in 1usize..6,
        ) {
            let ds = raw(t);
            let mut sp = Splits::default();
            sp.insert("n".into(), split_len(t, 0.2, 0.2));
            let idx = enumerate_windows(&ds, &sp, WindowSpec::new(l, h, s).unwrap()).unwrap();
            let b = sp.get("n").unwrap();
            for e in &idx.entries {
                let block = b.block(e.split);
                prop_assert!(e.t0 + l + h - 1 < t);
                prop_assert!(block.contains(&e.t0) && block.contains(&(e.t0 + l + h - 1)));
            }
            let (ds, _) = encoded(t);
            let idx = enumerate_windows(&ds, &sp, WindowSpec::new(l, h, s).unwrap()).unwrap();
            if idx.count(SplitTag::Train) > 0 {
                let mut seen: Vec<usize> = assemble_batches(&ds, &idx, SplitTag::Train, 3, Some(1))
                    .unwrap()
                    .flat_map(|b| b.unwrap().provenance.into_iter().map(|e| e.t0))
                    .collect();
                seen.sort_unstable();
                let want: Vec<usize> = idx.of(SplitTag::Train).iter().map(|e| e.t0).collect();
                prop_assert_eq!(seen, want);
            }
        }
    }
}

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::{read_array, write_array, RawArray};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub trainable: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matrix view used for low-rank factors: `[rows, everything else]`.
    fn matrix_dims(&self) -> Option<(usize, usize)> {
        if self.shape.len() < 2 {
            return None;
        }
        Some((self.shape[0], self.shape[1..].iter().product()))
    }
}

/// Additive low-rank factor pair `W = W0 + scale · B · A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub target: String,
    pub a: String,
    pub b: String,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Segment names to adapt; empty means every weight matrix or kernel
    /// whose smaller dimension exceeds the rank.
    pub targets: Vec<String>,
    pub seed: u64,
}

impl LoraConfig {
    pub fn all_weights(rank: usize, alpha: f64, seed: u64) -> Self {
        Self {
            rank,
            alpha,
            targets: Vec::new(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub segments: Vec<Segment>,
    pub lora: Vec<LoraAdapter>,
}

/// Flat parameter vector with named segments and a matching gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    segments: Vec<Segment>,
    lora: Vec<LoraAdapter>,
}

/// Tape variables for one binding of a [`ParamStore`].
pub struct Bound {
    vars: HashMap<String, Var>,
    leaves: Vec<(usize, Var)>,
}

impl Bound {
    /// Effective variable for `name` (base plus low-rank update if adapted).
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            segments: Vec::new(),
            lora: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], values: Vec<f64>) {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "segment {name} size"
        );
        assert!(self.index(name).is_none(), "duplicate segment {name}");
        self.segments.push(Segment {
            name: name.to_owned(),
            shape: shape.to_vec(),
            offset: self.values.len(),
            trainable: true,
        });
        self.grads.extend(std::iter::repeat_n(0.0, values.len()));
        self.values.extend(values);
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn adapters(&self) -> &[LoraAdapter] {
        &self.lora
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            segments: self.segments.clone(),
            lora: self.lora.clone(),
        }
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.index(name).map(|i| &self.segments[i])
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.segment(name)
            .map(|s| &self.values[s.offset..s.offset + s.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.segment(name)?.clone();
        Some(&mut self.values[s.offset..s.offset + s.len()])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn trainable_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.trainable)
            .map(Segment::len)
            .sum()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::invalid(format!("unknown segment {name}")))?;
        self.segments[i].trainable = trainable;
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        for s in &mut self.segments {
            s.trainable = false;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Puts every segment on `tape`: trainable ones as parameters, frozen
    /// ones as constants, and folds low-rank adapters into their targets.
    pub fn bind(&self, tape: &mut Tape<'_>) -> Bound {
        self.bind_with(tape, |_| true, false)
    }

    /// Binds only segments accepted by `keep`; with `frozen` every segment
    /// becomes a constant regardless of its trainable flag.
    pub fn bind_with(
        &self,
        tape: &mut Tape<'_>,
        keep: impl Fn(&Segment) -> bool,
        frozen: bool,
    ) -> Bound {
        let mut vars = HashMap::with_capacity(self.segments.len());
        let mut leaves = Vec::new();
        for (i, s) in self.segments.iter().enumerate() {
            if !keep(s) {
                continue;
            }
            let t = Tensor {
                shape: s.shape.clone(),
                data: self.values[s.offset..s.offset + s.len()].to_vec(),
            };
            let v = if s.trainable && !frozen {
                let v = tape.param(t);
                leaves.push((i, v));
                v
            } else {
                tape.constant(t)
            };
            vars.insert(s.name.clone(), v);
        }
        for ad in &self.lora {
            let Some(&base) = vars.get(&ad.target) else {
                continue;
            };
            let shape = tape.shape(base).to_vec();
            let ba = tape.matmul(vars[&ad.b], vars[&ad.a]);
            let ba = tape.scale(ba, ad.scale);
            let ba = tape.reshape(ba, &shape);
            let eff = tape.add(base, ba);
            vars.insert(ad.target.clone(), eff);
        }
        Bound { vars, leaves }
    }

    /// Adds tape gradients of the bound trainable leaves into `grads`.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients) {
        for &(i, v) in &bound.leaves {
            let s = &self.segments[i];
            if let Some(g) = grads.get(v) {
                for (dst, src) in self.grads[s.offset..s.offset + s.len()].iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }

    /// Mask that is 1 on trainable entries, 0 elsewhere.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.values.len()];
        for s in self.segments.iter().filter(|s| s.trainable) {
            m[s.offset..s.offset + s.len()]
                .iter_mut()
                .for_each(|v| *v = true);
        }
        m
    }

    /// Adds low-rank factors to the configured weights and freezes every
    /// other parameter. `B` starts at zero so outputs are unchanged.
    pub fn apply_lora(&self, cfg: &LoraConfig) -> Result<ParamStore> {
        if cfg.rank == 0 {
            return Err(Error::invalid("LoRA rank must be at least 1"));
        }
        if !self.lora.is_empty() {
            return Err(Error::invalid("parameters already carry low-rank adapters"));
        }
        let targets: Vec<Segment> = if cfg.targets.is_empty() {
            self.segments
                .iter()
                .filter(|s| s.name.ends_with("weight"))
                .filter(|s| s.matrix_dims().is_some_and(|(m, n)| cfg.rank < m.min(n)))
                .cloned()
                .collect()
        } else {
            cfg.targets
                .iter()
                .map(|t| {
                    let s = self
                        .segment(t)
                        .ok_or_else(|| Error::invalid(format!("LoRA target {t} does not exist")))?;
                    match s.matrix_dims() {
                        Some((m, n)) if cfg.rank < m.min(n) => Ok(s.clone()),
                        Some((m, n)) => Err(Error::invalid(format!(
                            "LoRA rank {} too large for {t} ({m}x{n})",
                            cfg.rank
                        ))),
                        None => Err(Error::invalid(format!("LoRA target {t} is not a matrix"))),
                    }
                })
                .collect::<Result<_>>()?
        };
        if targets.is_empty() {
            return Err(Error::invalid(
                "no segment is eligible for LoRA at this rank",
            ));
        }
        let mut out = self.clone();
        out.freeze_all();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let r = cfg.rank;
        for s in &targets {
            let (m, n) = s.matrix_dims().expect("checked above");
            let bound = 1.0 / (n as f64).sqrt();
            let a: Vec<f64> = (0..r * n)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let a_name = format!("{}.lora_a", s.name);
            let b_name = format!("{}.lora_b", s.name);
            out.push(&a_name, &[r, n], a);
            out.push(&b_name, &[m, r], vec![0.0; m * r]);
            out.lora.push(LoraAdapter {
                target: s.name.clone(),
                a: a_name,
                b: b_name,
                scale: cfg.alpha / r as f64,
            });
        }
        Ok(out)
    }

    /// Writes `layout.json` and one raw array per segment into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in &self.segments {
            let arr = RawArray::real(
                s.shape.clone(),
                self.values[s.offset..s.offset + s.len()].to_vec(),
            )?;
            write_array(&dir.join(format!("{}.arr", s.name)), &arr)?;
        }
        let path = dir.join("layout.json");
        let text = serde_json::to_string_pretty(&self.layout()).expect("layout serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<ParamStore> {
        let path = dir.join("layout.json");
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::format(&path, "layout not found"),
            _ => Error::io(&path, e),
        })?;
        let layout: ParamLayout =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut store = ParamStore::new();
        for s in &layout.segments {
            let file = dir.join(format!("{}.arr", s.name));
            let arr = read_array(&file)?;
            if arr.dims != s.shape {
                return Err(Error::format(
                    &file,
                    format!("dims {:?} differ from layout {:?}", arr.dims, s.shape),
                ));
            }
            store.push(&s.name, &s.shape, arr.real_values()?);
            store.set_trainable(&s.name, s.trainable)?;
        }
        store.lora = layout.lora;
        Ok(store)
    }
}

//! Low-rank adapters whose combined weight is rescaled back to the norm of
//! the frozen base weight.
//!
//! For a frozen `W[d×k]` with factors `A[r×k]` (down) and `B[d×r]` (up):
//!
//! ```text
//! ΔW = (alpha / rank) · B·A
//! W' = (W + ΔW) · ‖W‖ / ‖W + ΔW‖        (re-normalized modes)
//! ```
//!
//! The scale is recomputed on every forward pass, so `‖W'‖ = ‖W‖` holds at
//! all times rather than only after an explicit projection step.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use renormlab_tensor::{load_ften, save_ften, spectral_norm_fine, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenormMode {
    /// Plain LoRA: `W + ΔW`.
    Off,
    /// Re-normalized, with the scale ratio on the tape.
    #[default]
    Functional,
    /// Re-normalized, with the scale ratio treated as a constant.
    Detached,
}

impl RenormMode {
    pub fn is_renormalized(self) -> bool {
        !matches!(self, RenormMode::Off)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Frobenius,
    Spectral,
}

/// `‖t‖` under `kind`.
pub fn matrix_norm(t: &Tensor, kind: NormKind) -> Result<f64> {
    Ok(match kind {
        NormKind::Frobenius => t.frobenius_norm(),
        NormKind::Spectral => spectral_norm_fine(t)?.value,
    })
}

fn norm_on_tape(tape: &mut Tape, v: Var, kind: NormKind) -> Result<Var> {
    Ok(match kind {
        NormKind::Frobenius => tape.frobenius_norm(v)?,
        NormKind::Spectral => tape.spectral_norm(v)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    base: Tensor,
    down: Tensor,
    up: Tensor,
    rank: usize,
    alpha: f64,
    mode: RenormMode,
    norm_kind: NormKind,
    base_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub base_norm: f64,
    pub combined_norm: f64,
    pub effective_norm: f64,
    pub relative_drift: f64,
}

/// Tape handles for one adapter's trainable factors.
#[derive(Clone, Copy, Debug)]
pub struct FactorVars {
    pub down: Var,
    pub up: Var,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterManifest {
    rank: usize,
    alpha: f64,
    mode: RenormMode,
    norm_kind: NormKind,
    rows: usize,
    cols: usize,
}

impl LoraAdapter {
    /// Fresh adapter: `A ~ N(0, 1/k)`, `B = 0`, so `W' = W` at start.
    pub fn new<R: Rng + ?Sized>(
        base: Tensor,
        rank: usize,
        alpha: f64,
        mode: RenormMode,
        norm_kind: NormKind,
        rng: &mut R,
    ) -> Result<Self> {
        let (d, k) = base.rows_cols()?;
        let normal = Normal::new(0.0, 1.0 / (k as f64).sqrt()).expect("finite std");
        let down = Tensor::from_fn(&[rank.max(1), k], |_| normal.sample(rng));
        let up = Tensor::zeros(&[d, rank.max(1)]);
        Self::from_parts(base, down, up, rank, alpha, mode, norm_kind)
    }

    pub fn from_parts(
        base: Tensor,
        down: Tensor,
        up: Tensor,
        rank: usize,
        alpha: f64,
        mode: RenormMode,
        norm_kind: NormKind,
    ) -> Result<Self> {
        let (d, k) = base.rows_cols()?;
        if rank == 0 || rank > d.min(k) {
            return Err(LabError::Config(format!(
                "rank {rank} must lie in 1..={} for a {d}×{k} weight",
                d.min(k)
            )));
        }
        if !(alpha > 0.0) {
            return Err(LabError::Config(format!("alpha must be positive, got {alpha}")));
        }
        if down.shape() != [rank, k] || up.shape() != [d, rank] {
            return Err(LabError::Shape(format!(
                "factors {:?}/{:?} do not fit rank {rank} on {d}×{k}",
                down.shape(),
                up.shape()
            )));
        }
        let base_norm = matrix_norm(&base, norm_kind)?;
        Ok(LoraAdapter {
            base,
            down,
            up,
            rank,
            alpha,
            mode,
            norm_kind,
            base_norm,
        })
    }

    pub fn base(&self) -> &Tensor {
        &self.base
    }

    pub fn down(&self) -> &Tensor {
        &self.down
    }

    pub fn up(&self) -> &Tensor {
        &self.up
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mode(&self) -> RenormMode {
        self.mode
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    pub fn base_norm(&self) -> f64 {
        self.base_norm
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn set_factors(&mut self, down: Tensor, up: Tensor) -> Result<()> {
        if down.shape() != self.down.shape() || up.shape() != self.up.shape() {
            return Err(LabError::Shape("replacement factors change shape".into()));
        }
        self.down = down;
        self.up = up;
        Ok(())
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0) {
            return Err(LabError::Config(format!("alpha must be positive, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(())
    }

    /// `ΔW = (alpha/rank)·B·A`.
    pub fn delta_weight(&self) -> Result<Tensor> {
        Ok(self.up.matmul(&self.down)?.scale(self.scaling()))
    }

    /// `W + ΔW`, before any re-normalization.
    pub fn combined_weight(&self) -> Result<Tensor> {
        Ok(self.base.add(&self.delta_weight()?)?)
    }

    /// Builds `W'` on `tape` from the given factor handles. The base enters
    /// as a constant, so it can never receive a gradient.
    pub fn effective_weight_on(&self, tape: &mut Tape, factors: FactorVars) -> Result<Var> {
        let base = tape.constant(self.base.clone());
        let product = tape.matmul(factors.up, factors.down)?;
        let delta = tape.scale(product, self.scaling())?;
        let combined = tape.add(base, delta)?;
        if self.mode == RenormMode::Off {
            return Ok(combined);
        }
        let norm = norm_on_tape(tape, combined, self.norm_kind)?;
        let current = tape.value(norm).item()?;
        if current == 0.0 {
            return Err(LabError::DegenerateWeight(
                "‖W + ΔW‖ = 0: the adapter cancels its base weight".into(),
            ));
        }
        Ok(match self.mode {
            RenormMode::Functional => {
                let ratio = tape.div_from(self.base_norm, norm)?;
                tape.scale_by(combined, ratio)?
            }
            RenormMode::Detached => tape.scale(combined, self.base_norm / current)?,
            RenormMode::Off => unreachable!(),
        })
    }

    /// Binds both factors as constants (`trainable = false`) or trainable
    /// leaves and returns their handles.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> FactorVars {
        FactorVars {
            down: tape.leaf(self.down.clone(), trainable),
            up: tape.leaf(self.up.clone(), trainable),
        }
    }

    /// `W'` as a value. Shares the tape code path, so it is bit-identical to
    /// what a forward pass uses.
    pub fn effective_weight(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let factors = self.bind(&mut tape, false);
        let w = self.effective_weight_on(&mut tape, factors)?;
        Ok(tape.value(w).clone())
    }

    /// `x · W'ᵀ` for `x[n×k]`.
    pub fn forward_on(&self, tape: &mut Tape, x: Var, factors: FactorVars) -> Result<Var> {
        let k = self.base.shape()[1];
        if tape.shape(x).len() != 2 || tape.shape(x)[1] != k {
            return Err(LabError::Shape(format!(
                "input {:?} does not end in {k}",
                tape.shape(x)
            )));
        }
        let w = self.effective_weight_on(tape, factors)?;
        let wt = tape.transpose(w)?;
        Ok(tape.matmul(x, wt)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let factors = self.bind(&mut tape, false);
        let y = self.forward_on(&mut tape, xv, factors)?;
        Ok(tape.value(y).clone())
    }

    pub fn norm_preservation_report(&self) -> Result<NormReport> {
        let combined = matrix_norm(&self.combined_weight()?, self.norm_kind)?;
        let effective = matrix_norm(&self.effective_weight()?, self.norm_kind)?;
        Ok(NormReport {
            base_norm: self.base_norm,
            combined_norm: combined,
            effective_norm: effective,
            relative_drift: (effective - self.base_norm).abs() / self.base_norm,
        })
    }

    /// Writes `base.ften`, `down.ften`, `up.ften` and `adapter.toml`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_ften(dir.join("base.ften"), &self.base)?;
        save_ften(dir.join("down.ften"), &self.down)?;
        save_ften(dir.join("up.ften"), &self.up)?;
        let (rows, cols) = self.base.rows_cols()?;
        let manifest = AdapterManifest {
            rank: self.rank,
            alpha: self.alpha,
            mode: self.mode,
            norm_kind: self.norm_kind,
            rows,
            cols,
        };
        fs::write(dir.join("adapter.toml"), toml::to_string(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: AdapterManifest = toml::from_str(&fs::read_to_string(dir.join("adapter.toml"))?)?;
        let base = load_ften(dir.join("base.ften"))?;
        if base.shape() != [manifest.rows, manifest.cols] {
            return Err(LabError::Shape(format!(
                "base.ften is {:?}, manifest says {}×{}",
                base.shape(),
                manifest.rows,
                manifest.cols
            )));
        }
        Self::from_parts(
            base,
            load_ften(dir.join("down.ften"))?,
            load_ften(dir.join("up.ften"))?,
            manifest.rank,
            manifest.alpha,
            manifest.mode,
            manifest.norm_kind,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn adapter_with(base: Tensor, down: Tensor, up: Tensor, mode: RenormMode) -> LoraAdapter {
        let rank = down.shape()[0];
        LoraAdapter::from_parts(base, down, up, rank, rank as f64, mode, NormKind::Frobenius).unwrap()
    }

    #[test]
    fn zero_factor_gives_base_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = Tensor::from_fn(&[6, 5], |i| (i as f64 * 0.37).sin());
        for mode in [RenormMode::Off, RenormMode::Functional, RenormMode::Detached] {
            let a = LoraAdapter::new(base.clone(), 2, 8.0, mode, NormKind::Frobenius, &mut rng).unwrap();
            assert_eq!(a.effective_weight().unwrap(), base, "{mode:?}");
        }
    }

    #[test]
    fn renorm_hand_case() {
        // W = [[3,4]], ΔW = [[3,4]] → W + ΔW = [[6,8]] → scale 5/10.
        let base = Tensor::from_rows(&[&[3.0, 4.0]]).unwrap();
        let down = Tensor::from_rows(&[&[3.0, 4.0]]).unwrap();
        let up = Tensor::from_rows(&[&[1.0]]).unwrap();
        let a = adapter_with(base.clone(), down.clone(), up.clone(), RenormMode::Functional);
        assert_eq!(a.combined_weight().unwrap().data(), &[6.0, 8.0]);
        let w = a.effective_weight().unwrap();
        assert!(w.max_abs_diff(&base).unwrap() < 1e-15);

        let off = adapter_with(base, down, up, RenormMode::Off);
        let rep = off.norm_preservation_report().unwrap();
        assert_eq!(rep.combined_norm, 2.0 * rep.base_norm);
        assert!((rep.relative_drift - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cancelling_adapter_is_an_error() {
        let base = Tensor::from_rows(&[&[3.0, 4.0]]).unwrap();
        let down = Tensor::from_rows(&[&[-3.0, -4.0]]).unwrap();
        let up = Tensor::from_rows(&[&[1.0]]).unwrap();
        let a = adapter_with(base, down, up, RenormMode::Functional);
        assert!(matches!(a.effective_weight(), Err(LabError::DegenerateWeight(_))));
    }

    #[test]
    fn rank_bounds_enforced() {
        let base = Tensor::zeros(&[3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(LoraAdapter::new(base.clone(), 4, 4.0, RenormMode::Off, NormKind::Frobenius, &mut rng).is_err());
        assert!(LoraAdapter::new(base, 0, 4.0, RenormMode::Off, NormKind::Frobenius, &mut rng).is_err());
    }

    #[test]
    fn forward_passthrough_when_untrained() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = Tensor::from_fn(&[3, 4], |i| i as f64 - 5.0);
        let a = LoraAdapter::new(base.clone(), 2, 8.0, RenormMode::Off, NormKind::Frobenius, &mut rng).unwrap();
        let x = Tensor::from_fn(&[5, 4], |i| (i as f64).cos());
        let expected = x.matmul(&base.transpose().unwrap()).unwrap();
        assert_eq!(a.forward(&x).unwrap(), expected);
        assert!(a.forward(&Tensor::zeros(&[5, 3])).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = Tensor::from_fn(&[4, 6], |i| (i as f64).sin());
        let mut a = LoraAdapter::new(base, 3, 8.0, RenormMode::Detached, NormKind::Spectral, &mut rng).unwrap();
        let up = Tensor::from_fn(&[4, 3], |i| 0.1 * i as f64);
        a.set_factors(a.down().clone(), up).unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        assert_eq!(LoraAdapter::load(dir.path()).unwrap(), a);
    }
}

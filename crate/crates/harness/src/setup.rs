//! Core objects resolved from a [`RunConfig`].

use std::sync::Arc;

use zvonkin_core::integrators::Scheme;
use zvonkin_core::potential::{
    BoundedDrift, ConstantDrift, ConvexPotential, PowerPotential, QuadraticPotential, ResolventPotential, SignDrift,
    TanhDrift, ZeroDrift, ZeroPotential,
};
use zvonkin_core::rng::StreamKey;
use zvonkin_core::{CoeffVec, SpectralModel};

use crate::config::{DriftKind, PotentialKind, RunConfig, SchemeKind};
use crate::error::HResult;

/// Experiment ids mixed into the master seed.
pub mod experiment {
    pub const MODEL: u64 = 1;
    pub const SIMULATE: u64 = 2;
    pub const UNIQUENESS: u64 = 3;
    pub const TRANSFORM: u64 = 4;
    pub const RESOLVENT: u64 = 5;
    pub const INVARIANTS: u64 = 6;
    pub const POTENTIAL: u64 = 7;
    /// Acceptance criterion `i` uses `ACCEPTANCE + i`.
    pub const ACCEPTANCE: u64 = 100;
}

pub struct Setup {
    pub model: Arc<SpectralModel>,
    pub potential: Arc<dyn ConvexPotential>,
    pub drift: Arc<dyn BoundedDrift>,
    pub scheme: Scheme,
    pub x0: CoeffVec,
}

pub fn scheme(kind: SchemeKind, alpha_ratio: f64) -> Scheme {
    match kind {
        SchemeKind::SplitImplicit => Scheme::SplitImplicit,
        SchemeKind::YosidaExplicit => Scheme::YosidaExplicit { alpha_ratio },
    }
}

impl Setup {
    pub fn from_config(cfg: &RunConfig) -> HResult<Self> {
        let n = cfg.model.n_modes;
        let model = Arc::new(match cfg.model.grid_points {
            Some(m) => SpectralModel::dirichlet(n, m)?,
            None => SpectralModel::dirichlet_default(n)?,
        });
        let p = &cfg.potential;
        let potential: Arc<dyn ConvexPotential> = match p.kind {
            PotentialKind::Zero => Arc::new(ZeroPotential),
            PotentialKind::Quadratic => Arc::new(QuadraticPotential::new(p.omega)),
            PotentialKind::Power => Arc::new(PowerPotential::new(model.clone(), p.m, p.omega)?),
            PotentialKind::Resolvent => {
                let phi = Arc::new(PowerPotential::new(model.clone(), p.m, 0.0)?);
                let key = StreamKey::root(cfg.run.seed, experiment::POTENTIAL);
                Arc::new(ResolventPotential::new(model.clone(), phi, p.lambda, p.samples, key, p.omega)?)
            }
        };
        let d = &cfg.drift;
        let drift: Arc<dyn BoundedDrift> = match d.kind {
            DriftKind::Zero => Arc::new(ZeroDrift),
            DriftKind::Constant => {
                let c = d.c.clone().map(CoeffVec).unwrap_or_else(|| CoeffVec::unit(n, 0).scaled(d.b));
                Arc::new(ConstantDrift::new(c))
            }
            DriftKind::Sign => Arc::new(SignDrift { b: d.b }),
            DriftKind::Tanh => Arc::new(TanhDrift { b: d.b }),
        };
        let x0 = cfg.dynamics.x0.clone().map(CoeffVec).unwrap_or_else(|| CoeffVec::zeros(n));
        Ok(Setup {
            model,
            potential,
            drift,
            scheme: scheme(cfg.dynamics.scheme, cfg.dynamics.alpha_ratio),
            x0,
        })
    }
}

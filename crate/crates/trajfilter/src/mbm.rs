//! Multi-Bernoulli mixture filters over trajectories, in two flavours: the
//! plain MBM, whose hypotheses carry fractional existence probabilities, and
//! the 0/1-restricted MBM01, which trades existence probabilities for extra
//! hypothesis branches (born / not born, survive / die).
//!
//! Neither filter has a Poisson component: births enter as tracks, one per
//! birth Bernoulli per scan, and measurements never create tracks.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hypothesis::{spawn_scan_children, GlobalHypothesis, LocalHypothesis, Track};
use crate::models::{BirthKind, BirthModel, MeasurementModel, MotionModel};
use crate::trajectory::{BernoulliTrajectory, TrajectoryGaussian, TrajectoryMixture, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MbmMode {
    Mbm,
    Mbm01,
}

#[derive(Clone, Debug)]
pub struct MbmPosterior {
    pub mode: MbmMode,
    pub tracks: Vec<Track>,
    pub globals: Vec<GlobalHypothesis>,
    next_track_id: u32,
}

impl MbmPosterior {
    pub fn new(mode: MbmMode) -> Self {
        Self {
            mode,
            tracks: Vec::new(),
            globals: Vec::new(),
            next_track_id: 0,
        }
    }

    pub fn alloc_track_id(&mut self) -> u32 {
        let id = self.next_track_id;
        self.next_track_id += 1;
        id
    }

    fn check_binary_existence(&self) -> Result<()> {
        for t in &self.tracks {
            for h in &t.hyps {
                if let Some(b) = &h.bern {
                    if b.r != 0.0 && b.r != 1.0 {
                        return Err(Error::Contract(format!(
                            "existence {} of track {} leaf {} is not 0 or 1",
                            b.r, t.id, h.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn require_mode(p: &MbmPosterior, mode: MbmMode) -> Result<()> {
    if p.mode != mode {
        return Err(Error::ModelMismatch(format!(
            "posterior mode {:?} does not match operation mode {mode:?}",
            p.mode
        )));
    }
    Ok(())
}

fn require_bernoulli_birth(birth: &BirthModel) -> Result<()> {
    if birth.kind != BirthKind::MultiBernoulli {
        return Err(Error::ModelMismatch(
            "this filter takes multi-Bernoulli birth, not Poisson".into(),
        ));
    }
    Ok(())
}

fn birth_bernoulli(state: &crate::models::GaussianState, r: f64, k: u32) -> BernoulliTrajectory {
    BernoulliTrajectory::new(
        r,
        TrajectoryMixture::single(TrajectoryGaussian::single(k, state.clone())),
    )
}

/// Prediction to scan `k` for the fractional-existence filter: existing
/// leaves keep their weights, one fresh track per birth Bernoulli.
pub fn mbm_predict(
    p: &mut MbmPosterior,
    motion: &MotionModel,
    birth: &BirthModel,
    variant: Variant,
    k: u32,
) -> Result<()> {
    require_mode(p, MbmMode::Mbm)?;
    require_bernoulli_birth(birth)?;
    for track in &mut p.tracks {
        for hyp in &mut track.hyps {
            if let Some(bern) = &mut hyp.bern {
                *bern = match variant {
                    Variant::Current => bern.predict_current(motion),
                    Variant::All => bern.predict_all(motion, k),
                };
            }
        }
    }
    for b in &birth.components {
        let mut track = Track::new(p.alloc_track_id(), k);
        let id = track.alloc_id();
        track.hyps.push(LocalHypothesis::root(
            id,
            0.0,
            Some(birth_bernoulli(&b.state, b.weight, k)),
        ));
        p.tracks.push(track);
    }
    Ok(())
}

/// Prediction to scan `k` for the 0/1 filter. Existence-one leaves split in
/// the current-trajectories variant (survive / die); in the all-trajectories
/// variant the split happens inside the mixture and the leaf count stays
/// put. Births split into born / not-born leaf pairs.
pub fn mbm01_predict(
    p: &mut MbmPosterior,
    motion: &MotionModel,
    birth: &BirthModel,
    variant: Variant,
    k: u32,
) -> Result<()> {
    require_mode(p, MbmMode::Mbm01)?;
    require_bernoulli_birth(birth)?;
    p.check_binary_existence()?;
    for track in &mut p.tracks {
        match variant {
            Variant::Current => {
                let parents = std::mem::take(&mut track.hyps);
                let mut children = Vec::with_capacity(parents.len());
                for parent in &parents {
                    match &parent.bern {
                        Some(b) if b.r == 1.0 => {
                            if motion.ps > 0.0 {
                                let id = track.alloc_id();
                                let survived =
                                    BernoulliTrajectory::new(1.0, b.mix.predict_current(motion));
                                children.push(parent.child(
                                    id,
                                    motion.ps.ln(),
                                    Some(survived),
                                    None,
                                ));
                            }
                            if motion.ps < 1.0 {
                                let id = track.alloc_id();
                                let died = BernoulliTrajectory::new(0.0, b.mix.clone());
                                children.push(parent.child(
                                    id,
                                    (1.0 - motion.ps).ln(),
                                    Some(died),
                                    None,
                                ));
                            }
                        }
                        // dead or absent: weight and density carry over
                        _ => children.push(parent.clone()),
                    }
                }
                track.hyps = children;
            }
            Variant::All => {
                for hyp in &mut track.hyps {
                    if let Some(bern) = &mut hyp.bern {
                        if bern.r == 1.0 {
                            *bern = bern.predict_all(motion, k);
                        }
                    }
                }
            }
        }
    }
    for b in &birth.components {
        let mut track = Track::new(p.alloc_track_id(), k);
        if b.weight > 0.0 {
            let id = track.alloc_id();
            track.hyps.push(LocalHypothesis::root(
                id,
                b.weight.ln(),
                Some(birth_bernoulli(&b.state, 1.0, k)),
            ));
        }
        if b.weight < 1.0 {
            let id = track.alloc_id();
            track.hyps.push(LocalHypothesis::root(
                id,
                (1.0 - b.weight).ln(),
                Some(birth_bernoulli(&b.state, 0.0, k)),
            ));
        }
        p.tracks.push(track);
    }
    Ok(())
}

fn require_clutter(meas: &MeasurementModel) -> Result<()> {
    if meas.clutter_rate <= 0.0 {
        return Err(Error::ModelMismatch(
            "multi-Bernoulli updates divide by the clutter density; clutter rate must be positive"
                .into(),
        ));
    }
    Ok(())
}

/// Measurement update at scan `k`: misdetection and gated detection children
/// per leaf, no new tracks.
pub fn mbm_update(
    p: &mut MbmPosterior,
    meas: &MeasurementModel,
    zs: &[DVector<f64>],
    k: u32,
    gate: bool,
) -> Result<()> {
    require_mode(p, MbmMode::Mbm)?;
    require_clutter(meas)?;
    for track in &mut p.tracks {
        spawn_scan_children(track, meas, zs, k, gate)?;
    }
    Ok(())
}

/// Same branching as `mbm_update`; existence-zero leaves pass through with a
/// unit weight factor, existence-one leaves keep r = 1 under misdetection.
pub fn mbm01_update(
    p: &mut MbmPosterior,
    meas: &MeasurementModel,
    zs: &[DVector<f64>],
    k: u32,
    gate: bool,
) -> Result<()> {
    require_mode(p, MbmMode::Mbm01)?;
    require_clutter(meas)?;
    for track in &mut p.tracks {
        spawn_scan_children(track, meas, zs, k, gate)?;
    }
    p.check_binary_existence()
}

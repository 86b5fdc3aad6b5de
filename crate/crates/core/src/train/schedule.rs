/// Step decay triggered when the epoch loss stops improving.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauConfig {
    pub factor: f64,
    /// Relative improvement over the best earlier epoch that counts as progress.
    pub min_rel_improvement: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.1,
            min_rel_improvement: 1e-3,
        }
    }
}

/// Learning rates never decay below this.
pub const LR_FLOOR: f64 = 1e-8;

/// Whether the last entry of `history` improves on the best earlier one by
/// at least the configured relative margin.
pub fn improved(history: &[f64], config: &PlateauConfig) -> bool {
    let Some((&latest, earlier)) = history.split_last() else {
        return true;
    };
    let Some(best) = earlier.iter().copied().reduce(f64::min) else {
        return true;
    };
    if best == 0.0 {
        return latest < 0.0;
    }
    (best - latest) / best.abs() >= config.min_rel_improvement
}

/// Applies the plateau rule to `(lr_g, lr_d)` jointly.
pub fn plateau_update(history: &[f64], lrs: (f64, f64), config: &PlateauConfig) -> (f64, f64) {
    if improved(history, config) {
        return lrs;
    }
    let decay = |lr: f64| (lr * config.factor).max(LR_FLOOR);
    (decay(lrs.0), decay(lrs.1))
}

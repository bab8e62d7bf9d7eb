use super::MetaError;

/// One inner step of one branch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    /// Loss at the step's starting parameters.
    pub loss: f64,
    /// Loss after the update, on the same batch.
    pub loss_after: f64,
    pub gradient: Vec<f64>,
    /// `theta^{k+1} - theta^k`.
    pub delta: Vec<f64>,
}

impl TrajectoryStep {
    pub fn loss_delta(&self) -> f64 {
        self.loss_after - self.loss
    }
}

/// Per-step snapshots of one branch over one slice.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<TrajectoryStep>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn check(&self, accumulator: &[f64]) -> Result<(), MetaError> {
        if self.steps.is_empty() {
            return Err(MetaError::EmptyTrajectory);
        }
        for s in &self.steps {
            for len in [s.gradient.len(), s.delta.len()] {
                if len != accumulator.len() {
                    return Err(MetaError::LengthMismatch {
                        expected: accumulator.len(),
                        found: len,
                    });
                }
            }
        }
        Ok(())
    }
}

/// `acc += sum_k -(dL^k * grad^k + dtheta^k)`.
pub fn leap_accumulate(
    accumulator: &mut [f64],
    record: &TrajectoryRecord,
) -> Result<(), MetaError> {
    record.check(accumulator)?;
    for s in &record.steps {
        let dl = s.loss_delta();
        for ((a, g), d) in accumulator.iter_mut().zip(&s.gradient).zip(&s.delta) {
            *a -= dl * g + d;
        }
    }
    Ok(())
}

/// `acc += grad^{K-1}`.
pub fn fomaml_accumulate(
    accumulator: &mut [f64],
    record: &TrajectoryRecord,
) -> Result<(), MetaError> {
    record.check(accumulator)?;
    let last = record.steps.last().expect("checked non-empty");
    for (a, g) in accumulator.iter_mut().zip(&last.gradient) {
        *a += g;
    }
    Ok(())
}

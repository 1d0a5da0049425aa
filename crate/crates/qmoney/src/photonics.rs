//! Stochastic simulation of hidden-matching measurements on phase-encoded
//! coherent-state blocks.
//!
//! Two device models are provided. The abstract model draws directly from
//! the (η, β) statistics the security calculus consumes and is the default
//! for protocol work. The detailed model simulates per-port photodetection
//! (detector efficiency, dark counts, interference visibility, splitter
//! loss); [`calibrate_detailed`] reduces it to exact (η, β) values by
//! enumerating all click combinations, and doubles as the oracle for the
//! Monte Carlo sampler.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhotonicsError {
    #[error("block bits must fit in 4 bits, got {0:#x}")]
    InvalidBits(u8),
    #[error("invalid pulse pair ({i}, {j}): need 1 <= i < j <= 4")]
    InvalidPair { i: u8, j: u8 },
    #[error("device {name} must be a probability in [0, 1], got {value}")]
    InvalidDeviceParameter { name: &'static str, value: f64 },
}

/// The four secret bits x1x2x3x4 of one block, packed into a nibble.
/// Bit k of the nibble (LSB first) holds x_{k+1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockBits(u8);

impl BlockBits {
    pub fn new(nibble: u8) -> Result<Self, PhotonicsError> {
        if nibble > 0x0f {
            return Err(PhotonicsError::InvalidBits(nibble));
        }
        Ok(Self(nibble))
    }

    /// Value of x_pos for pos in 1..=4.
    pub fn bit(self, pos: u8) -> bool {
        debug_assert!((1..=4).contains(&pos));
        (self.0 >> (pos - 1)) & 1 == 1
    }

    /// Parity x_i ⊕ x_j for the given pair.
    pub fn parity(self, pair: Pair) -> bool {
        self.bit(pair.i) ^ self.bit(pair.j)
    }

    pub fn complement(self) -> Self {
        Self(!self.0 & 0x0f)
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

/// One banknote state: a 4-bit secret and the mean photon number per pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseBlock {
    pub bits: BlockBits,
    pub mu: f64,
}

/// Parity x_i ⊕ x_j of a block over a pulse pair.
pub fn parity(block: &PulseBlock, pair: Pair) -> bool {
    block.bits.parity(pair)
}

/// An unordered pulse pair (i, j) with 1 <= i < j <= 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    i: u8,
    j: u8,
}

impl Pair {
    /// All six pulse pairs.
    pub const ALL: [Pair; 6] = [
        Pair { i: 1, j: 2 },
        Pair { i: 1, j: 3 },
        Pair { i: 1, j: 4 },
        Pair { i: 2, j: 3 },
        Pair { i: 2, j: 4 },
        Pair { i: 3, j: 4 },
    ];

    pub fn new(i: u8, j: u8) -> Result<Self, PhotonicsError> {
        if i >= 1 && i < j && j <= 4 {
            Ok(Self { i, j })
        } else {
            Err(PhotonicsError::InvalidPair { i, j })
        }
    }

    pub fn i(self) -> u8 {
        self.i
    }

    pub fn j(self) -> u8 {
        self.j
    }

    /// Which interferometer arm measures this pair, identified by its delay.
    /// The pulse spacing maps the index span j − i onto the arm delay:
    /// span 1 → 2 ns, span 2 → 4 ns, span 3 → 6 ns.
    pub fn delay_class(self) -> DelayClass {
        match self.j - self.i {
            1 => DelayClass::Ns2,
            2 => DelayClass::Ns4,
            _ => DelayClass::Ns6,
        }
    }
}

impl std::fmt::Display for Pair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.i, self.j)
    }
}

/// Interferometer arm, identified by its delay line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DelayClass {
    Ns2,
    Ns4,
    Ns6,
}

impl std::fmt::Display for DelayClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DelayClass::Ns2 => "2ns",
            DelayClass::Ns4 => "4ns",
            DelayClass::Ns6 => "6ns",
        };
        f.write_str(s)
    }
}

/// One of the three perfect matchings on pulse positions {1,2,3,4}.
/// Together they cover all six unordered pairs exactly once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Matching {
    M1,
    M2,
    M3,
}

impl Matching {
    pub const ALL: [Matching; 3] = [Matching::M1, Matching::M2, Matching::M3];

    /// The two disjoint pairs of this matching.
    pub fn pairs(self) -> [Pair; 2] {
        match self {
            Matching::M1 => [Pair { i: 1, j: 2 }, Pair { i: 3, j: 4 }],
            Matching::M2 => [Pair { i: 1, j: 3 }, Pair { i: 2, j: 4 }],
            Matching::M3 => [Pair { i: 1, j: 4 }, Pair { i: 2, j: 3 }],
        }
    }

    pub fn contains(self, pair: Pair) -> bool {
        self.pairs().contains(&pair)
    }
}

/// Result of measuring one block against one matching: either a definite
/// (pair, parity-bit) answer or no outcome at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementOutcome {
    Conclusive { pair: Pair, bit: bool },
    Inconclusive,
}

impl MeasurementOutcome {
    pub fn is_conclusive(&self) -> bool {
        matches!(self, MeasurementOutcome::Conclusive { .. })
    }
}

/// Detector-level description of the measurement apparatus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetailedDevice {
    /// Detector and path efficiency folded into one factor.
    pub eta_det: f64,
    /// Dark-count probability per detector per gate.
    pub p_dark: f64,
    /// Interference visibility V; below 1 photons leak to the wrong port.
    pub visibility: f64,
    /// Fraction of μ reaching each interferometer (1/3 for the passive
    /// 1×3 splitter).
    pub split_loss: f64,
}

impl DetailedDevice {
    /// Reference parameter set tuned so the exact calibration lands on
    /// (η ≈ 0.0336, β ≈ 0.033).
    pub fn reference_defaults() -> Self {
        Self {
            eta_det: 0.10252,
            p_dark: 1e-6,
            visibility: 0.934111,
            split_loss: 1.0 / 3.0,
        }
    }

    /// All four parameters must be probabilities in [0, 1].
    pub fn validate(&self) -> Result<(), PhotonicsError> {
        for (value, name) in [
            (self.eta_det, "eta_det"),
            (self.p_dark, "p_dark"),
            (self.visibility, "visibility"),
            (self.split_loss, "split_loss"),
        ] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(PhotonicsError::InvalidDeviceParameter { name, value });
            }
        }
        Ok(())
    }

    /// Click probabilities (correct port, wrong port) for a single
    /// interfering pair at mean photon number `mu` per pulse.
    fn port_click_probs(&self, mu: f64) -> (f64, f64) {
        let mu_eff = 2.0 * mu * self.split_loss;
        let mu_correct = mu_eff * (1.0 + self.visibility) / 2.0;
        let mu_wrong = mu_eff * (1.0 - self.visibility) / 2.0;
        let click = |m: f64| 1.0 - (1.0 - self.p_dark) * (-self.eta_det * m).exp();
        (click(mu_correct), click(mu_wrong))
    }
}

/// Measurement device: either the abstract (η, β) model or the detailed
/// per-port photodetection model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviceModel {
    Abstract {
        /// Probability of a conclusive outcome.
        eta_c: f64,
        /// Probability that a conclusive bit is flipped.
        e_flip: f64,
    },
    Detailed(DetailedDevice),
}

impl DeviceModel {
    /// Abstract model at the reference operating statistics.
    pub fn reference_abstract() -> Self {
        DeviceModel::Abstract { eta_c: 0.0336, e_flip: 0.033 }
    }

    /// Noiseless abstract device: always conclusive, never wrong.
    pub fn ideal() -> Self {
        DeviceModel::Abstract { eta_c: 1.0, e_flip: 0.0 }
    }
}

/// Measure `block` with the measurement of matching `m` on `dev`.
pub fn sample_outcome<R: Rng + ?Sized>(
    block: &PulseBlock,
    m: Matching,
    dev: &DeviceModel,
    rng: &mut R,
) -> MeasurementOutcome {
    match dev {
        DeviceModel::Abstract { eta_c, e_flip } => {
            sample_outcome_abstract(block, m, *eta_c, *e_flip, rng)
        }
        DeviceModel::Detailed(d) => sample_outcome_detailed(block, m, d, rng),
    }
}

/// Abstract sampler: conclusive with probability `eta_c`; a conclusive
/// outcome reports a pair drawn uniformly from the matching and the true
/// parity flipped with probability `e_flip`.
pub fn sample_outcome_abstract<R: Rng + ?Sized>(
    block: &PulseBlock,
    m: Matching,
    eta_c: f64,
    e_flip: f64,
    rng: &mut R,
) -> MeasurementOutcome {
    if rng.gen::<f64>() >= eta_c {
        return MeasurementOutcome::Inconclusive;
    }
    let pair = m.pairs()[rng.gen_range(0..2usize)];
    let mut bit = block.bits.parity(pair);
    if e_flip > 0.0 && rng.gen::<f64>() < e_flip {
        bit = !bit;
    }
    MeasurementOutcome::Conclusive { pair, bit }
}

/// Detailed sampler: each of the four detector ports (two pairs × two
/// output ports) clicks independently; the parity of the block routes the
/// interfering photons to the "correct" port of each pair. Exactly one
/// click on a pair yields that port's bit, a double click yields a random
/// bit, and when both pairs produce candidates one is kept uniformly.
pub fn sample_outcome_detailed<R: Rng + ?Sized>(
    block: &PulseBlock,
    m: Matching,
    dev: &DetailedDevice,
    rng: &mut R,
) -> MeasurementOutcome {
    let (p_correct, p_wrong) = dev.port_click_probs(block.mu);
    let mut candidates: [Option<(Pair, bool)>; 2] = [None, None];
    for (slot, pair) in m.pairs().into_iter().enumerate() {
        let true_bit = block.bits.parity(pair);
        let clicked_correct = rng.gen::<f64>() < p_correct;
        let clicked_wrong = rng.gen::<f64>() < p_wrong;
        candidates[slot] = match (clicked_correct, clicked_wrong) {
            (true, false) => Some((pair, true_bit)),
            (false, true) => Some((pair, !true_bit)),
            (true, true) => Some((pair, rng.gen::<bool>())),
            (false, false) => None,
        };
    }
    match (candidates[0], candidates[1]) {
        (Some(a), Some(b)) => {
            let (pair, bit) = if rng.gen::<bool>() { a } else { b };
            MeasurementOutcome::Conclusive { pair, bit }
        }
        (Some((pair, bit)), None) | (None, Some((pair, bit))) => {
            MeasurementOutcome::Conclusive { pair, bit }
        }
        (None, None) => MeasurementOutcome::Inconclusive,
    }
}

/// Exact (η, β) statistics of a detailed device.
///
/// `beta` is `None` when the device never produces a conclusive outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub eta: f64,
    pub beta: Option<f64>,
}

/// Reduce a detailed device to the (η, β) interface by enumerating all 16
/// click combinations of the four ports with their exact probabilities and
/// applying the same resolution rule as the sampler. The click statistics
/// are parity-symmetric, so a single representative block suffices.
pub fn calibrate_detailed(dev: &DetailedDevice, mu: f64) -> Calibration {
    let (p_correct, p_wrong) = dev.port_click_probs(mu);
    // candidate status of one pair: (probability weight, present, wrongness)
    let pair_cases = |correct: bool, wrong: bool| -> (f64, bool, f64) {
        let p = (if correct { p_correct } else { 1.0 - p_correct })
            * (if wrong { p_wrong } else { 1.0 - p_wrong });
        match (correct, wrong) {
            (true, false) => (p, true, 0.0),
            (false, true) => (p, true, 1.0),
            (true, true) => (p, true, 0.5),
            (false, false) => (p, false, 0.0),
        }
    };
    let mut eta = 0.0;
    let mut wrong_mass = 0.0;
    for combo in 0u8..16 {
        let (pa, has_a, wrong_a) = pair_cases(combo & 1 != 0, combo & 2 != 0);
        let (pb, has_b, wrong_b) = pair_cases(combo & 4 != 0, combo & 8 != 0);
        let p = pa * pb;
        match (has_a, has_b) {
            (true, true) => {
                eta += p;
                wrong_mass += p * 0.5 * (wrong_a + wrong_b);
            }
            (true, false) => {
                eta += p;
                wrong_mass += p * wrong_a;
            }
            (false, true) => {
                eta += p;
                wrong_mass += p * wrong_b;
            }
            (false, false) => {}
        }
    }
    let beta = if eta > 0.0 { Some(wrong_mass / eta) } else { None };
    Calibration { eta, beta }
}

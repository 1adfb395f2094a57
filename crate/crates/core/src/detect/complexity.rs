//! Operation counters and closed-form complexity orders.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

/// Work done by a detector run. Counts only grow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityCounter {
    pub complex_mults: u64,
    /// Exact MMSE weight computations (one Hermitian solve each).
    pub weight_computations: u64,
    pub solves: u64,
}

impl ComplexityCounter {
    pub fn mults(&mut self, k: usize) {
        self.complex_mults += k as u64;
    }
}

impl AddAssign for ComplexityCounter {
    fn add_assign(&mut self, o: Self) {
        self.complex_mults += o.complex_mults;
        self.weight_computations += o.weight_computations;
        self.solves += o.solves;
    }
}

/// Orders of growth per detection iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityOrders {
    pub classical_mmse: f64,
    pub sic_mmse: f64,
    pub approx_sic_mmse: f64,
    pub mrc: f64,
    pub message_passing: f64,
}

pub fn complexity_orders(
    m: usize,
    n: usize,
    l_max: usize,
    paths: usize,
    order: usize,
    delta_m: usize,
) -> ComplexityOrders {
    let d = (m - l_max) as f64;
    let n = n as f64;
    let l3 = (l_max as f64).powi(3);
    ComplexityOrders {
        classical_mmse: (d * n).powi(3),
        sic_mmse: d * n * l3,
        approx_sic_mmse: d * n * l3 / delta_m.max(1) as f64,
        mrc: d * n * paths as f64,
        message_passing: d * n * paths as f64 * order as f64,
    }
}

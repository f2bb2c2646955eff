//! Built-in benchmark networks. The three-subsystem weak/strong coupling
//! networks mirror the bundled JSON configs; the toys back unit and
//! integration tests.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::model::{quadrant_regions, PwaMode, PwaNetwork, Subsystem};
use crate::polytope::HPolytope;
use crate::terminal::TerminalIngredients;

fn mat2(rows: [f64; 4]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &rows)
}

fn box2(r: f64) -> HPolytope {
    HPolytope::from_box(&DVector::from_element(2, -r), &DVector::from_element(2, r)).expect("box")
}

fn box1(r: f64) -> HPolytope {
    HPolytope::from_box(&DVector::from_element(1, -r), &DVector::from_element(1, r)).expect("box")
}

/// Unconstrained region (no facets): the whole ambient space.
fn free_region(d: usize) -> HPolytope {
    HPolytope::new(DMatrix::zeros(0, d), DVector::zeros(0)).expect("free region")
}

/// Terminal set `{x | [P; -P] x <= 47}` shared by all three subsystems of
/// the coupled benchmarks.
pub fn benchmark_terminal_set() -> HPolytope {
    let p = mat2([7.8514, 8.1971, 8.1957, -7.8503]);
    let mut facets = DMatrix::zeros(4, 2);
    facets.view_mut((0, 0), (2, 2)).copy_from(&p);
    facets.view_mut((2, 0), (2, 2)).copy_from(&(-&p));
    HPolytope::new(facets, DVector::from_element(4, 47.0)).expect("terminal set")
}

fn benchmark_gain_map() -> BTreeMap<usize, DMatrix<f64>> {
    let k13 = DMatrix::from_row_slice(1, 2, &[-0.0544, -0.1398]);
    let k24 = DMatrix::from_row_slice(1, 2, &[-0.1544, -0.0295]);
    let mut gains = BTreeMap::new();
    gains.insert(0, k13.clone());
    gains.insert(1, k24.clone());
    gains.insert(2, k13);
    gains.insert(3, k24);
    gains
}

/// Terminal cost weights for the weakly coupled benchmark.
pub fn weak_coupling_phis() -> Vec<DMatrix<f64>> {
    let base = mat2([3.938, 1.262, 1.262, 4.346]);
    vec![
        &base + mat2([12.67, 8.87, 8.87, 8.14]) * 1e-4,
        &base + mat2([10.58, 7.90, 7.90, 8.26]) * 1e-4,
        &base + mat2([8.53, 5.43, 5.43, 7.10]) * 1e-4,
    ]
}

/// Terminal cost weights for the strongly coupled benchmark.
pub fn strong_coupling_phis() -> Vec<DMatrix<f64>> {
    vec![
        mat2([40.98, 28.29, 28.29, 43.73]),
        mat2([32.07, 20.90, 20.90, 35.91]),
        mat2([31.97, 20.83, 20.83, 35.07]),
    ]
}

fn coupled_benchmark(coupling_gain: f64, phis: Vec<DMatrix<f64>>) -> PwaNetwork {
    let a13 = mat2([0.6324, 0.2785, 0.0975, 0.5469]);
    let a24 = mat2([0.6555, 0.7060, 0.1712, 0.0318]);
    let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let couple = mat2([coupling_gain, 0.0, 0.0, coupling_gain]);
    let regions = quadrant_regions();

    // directed coupling: 0 <- 1, 1 <- 0, 1 <- 2, 2 <- 0; neighbor lists are
    // kept symmetric with zero matrices left implicit
    let coupling_of = |i: usize| -> BTreeMap<usize, DMatrix<f64>> {
        let mut map = BTreeMap::new();
        match i {
            0 => {
                map.insert(1, couple.clone());
            }
            1 => {
                map.insert(0, couple.clone());
                map.insert(2, couple.clone());
            }
            2 => {
                map.insert(0, couple.clone());
            }
            _ => unreachable!(),
        }
        map
    };

    let subsystems = (0..3)
        .map(|i| {
            let modes = (0..4)
                .map(|l| PwaMode {
                    a: if l % 2 == 0 { a13.clone() } else { a24.clone() },
                    b: b.clone(),
                    c: DVector::zeros(2),
                    coupling: coupling_of(i),
                    region: regions[l].clone(),
                })
                .collect();
            Subsystem {
                id: i,
                state_dim: 2,
                input_dim: 1,
                modes,
                state_set: box2(20.0),
                input_set: box1(3.0),
                state_cost: mat2([2.0, 0.0, 0.0, 2.0]),
                input_cost: DMatrix::from_element(1, 1, 0.2),
                neighbor_costs: BTreeMap::new(),
                coupled_ineq: None,
                terminal: Some(TerminalIngredients {
                    set: benchmark_terminal_set(),
                    gains: benchmark_gain_map(),
                    phi: phis[i].clone(),
                }),
            }
        })
        .collect();
    let neighbors = vec![vec![1, 2], vec![0, 2], vec![0, 1]];
    PwaNetwork::new(subsystems, neighbors, 5).expect("benchmark network")
}

/// Three identical planar subsystems on the quadrant partition with
/// coupling gain 2e-3.
pub fn weak_coupling_network() -> PwaNetwork {
    coupled_benchmark(2e-3, weak_coupling_phis())
}

/// Same network with coupling gain 0.16; the uncontrolled global system is
/// unstable.
pub fn strong_coupling_network() -> PwaNetwork {
    coupled_benchmark(0.16, strong_coupling_phis())
}

/// Benchmark initial condition used by the closed-loop runs.
pub fn benchmark_initial_state() -> Vec<DVector<f64>> {
    vec![
        DVector::from_row_slice(&[-11.0, -18.0]),
        DVector::from_row_slice(&[2.0, -19.0]),
        DVector::from_row_slice(&[15.0, 19.0]),
    ]
}

/// Gain maps per subsystem extracted for the terminal-set routines.
pub fn benchmark_gains(net: &PwaNetwork) -> Vec<BTreeMap<usize, DMatrix<f64>>> {
    net.subsystems
        .iter()
        .map(|s| {
            s.terminal
                .as_ref()
                .map(|t| t.gains.clone())
                .unwrap_or_default()
        })
        .collect()
}

/// Two planar subsystems on quadrant cones with pinned stable matrices;
/// no terminal ingredients. Used for oracle and study-shaped tests.
pub fn quadrant_toy_network(horizon: usize) -> PwaNetwork {
    let regions = quadrant_regions();
    let a_modes = [
        mat2([0.80, 0.20, 0.00, 0.70]),
        mat2([0.60, -0.30, 0.10, 0.50]),
        mat2([0.75, 0.10, -0.10, 0.65]),
        mat2([0.55, 0.25, 0.05, 0.45]),
    ];
    let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
    let couple = mat2([0.05, 0.0, 0.0, 0.05]);
    let subsystems = (0..2)
        .map(|i| {
            let other = 1 - i;
            let modes = (0..4)
                .map(|l| PwaMode {
                    a: a_modes[l].clone(),
                    b: b.clone(),
                    c: DVector::zeros(2),
                    coupling: BTreeMap::from([(other, couple.clone())]),
                    region: regions[l].clone(),
                })
                .collect();
            Subsystem {
                id: i,
                state_dim: 2,
                input_dim: 1,
                modes,
                state_set: box2(10.0),
                input_set: box1(1.0),
                state_cost: DMatrix::identity(2, 2),
                input_cost: DMatrix::identity(1, 1),
                neighbor_costs: BTreeMap::new(),
                coupled_ineq: None,
                terminal: None,
            }
        })
        .collect();
    PwaNetwork::new(subsystems, vec![vec![1], vec![0]], horizon).expect("quadrant toy")
}

/// Two scalar subsystems with the half-line regions `x <= 0` and `x >= 0`.
pub fn half_plane_toy(horizon: usize) -> PwaNetwork {
    let neg = HPolytope::new(
        DMatrix::from_row_slice(1, 1, &[1.0]),
        DVector::from_element(1, 0.0),
    )
    .unwrap();
    let pos = HPolytope::new(
        DMatrix::from_row_slice(1, 1, &[-1.0]),
        DVector::from_element(1, 0.0),
    )
    .unwrap();
    let a_modes = [0.5f64, 0.7];
    let subsystems = (0..2)
        .map(|i| {
            let other = 1 - i;
            let modes = (0..2)
                .map(|l| PwaMode {
                    a: DMatrix::from_element(1, 1, a_modes[l]),
                    b: DMatrix::from_element(1, 1, 1.0),
                    c: DVector::zeros(1),
                    coupling: BTreeMap::from([(other, DMatrix::from_element(1, 1, 0.1))]),
                    region: if l == 0 { neg.clone() } else { pos.clone() },
                })
                .collect();
            Subsystem {
                id: i,
                state_dim: 1,
                input_dim: 1,
                modes,
                state_set: box1(2.0),
                input_set: box1(1.0),
                state_cost: DMatrix::identity(1, 1),
                input_cost: DMatrix::identity(1, 1),
                neighbor_costs: BTreeMap::new(),
                coupled_ineq: None,
                terminal: None,
            }
        })
        .collect();
    PwaNetwork::new(subsystems, vec![vec![1], vec![0]], horizon).expect("half-plane toy")
}

/// Single scalar subsystem with `x+ = u`, one free region, unit horizon.
pub fn scalar_single(q: f64, r: f64, phi: f64) -> PwaNetwork {
    let sub = Subsystem {
        id: 0,
        state_dim: 1,
        input_dim: 1,
        modes: vec![PwaMode {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DVector::zeros(1),
            coupling: BTreeMap::new(),
            region: free_region(1),
        }],
        state_set: box1(100.0),
        input_set: box1(100.0),
        state_cost: DMatrix::from_element(1, 1, q),
        input_cost: DMatrix::from_element(1, 1, r),
        neighbor_costs: BTreeMap::new(),
        coupled_ineq: None,
        terminal: Some(TerminalIngredients {
            set: box1(100.0),
            gains: BTreeMap::from([(0, DMatrix::zeros(1, 1))]),
            phi: DMatrix::from_element(1, 1, phi),
        }),
    };
    PwaNetwork::new(vec![sub], vec![vec![]], 1).expect("scalar single")
}

/// Single scalar subsystem whose closed loop under zero gain is `x+ = a x`.
pub fn scalar_single_closed(a: f64) -> PwaNetwork {
    let sub = Subsystem {
        id: 0,
        state_dim: 1,
        input_dim: 1,
        modes: vec![PwaMode {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DVector::zeros(1),
            coupling: BTreeMap::new(),
            region: free_region(1),
        }],
        state_set: box1(10.0),
        input_set: box1(1.0),
        state_cost: DMatrix::identity(1, 1),
        input_cost: DMatrix::identity(1, 1),
        neighbor_costs: BTreeMap::new(),
        coupled_ineq: None,
        terminal: None,
    };
    PwaNetwork::new(vec![sub], vec![vec![]], 1).expect("scalar closed loop")
}

/// Single planar subsystem whose closed loop under zero gain is `x+ = a x`.
pub fn diag_closed_loop_2d(a: f64) -> PwaNetwork {
    let sub = Subsystem {
        id: 0,
        state_dim: 2,
        input_dim: 1,
        modes: vec![PwaMode {
            a: mat2([a, 0.0, 0.0, a]),
            b: DMatrix::zeros(2, 1),
            c: DVector::zeros(2),
            coupling: BTreeMap::new(),
            region: free_region(2),
        }],
        state_set: box2(10.0),
        input_set: box1(1.0),
        state_cost: DMatrix::identity(2, 2),
        input_cost: DMatrix::identity(1, 1),
        neighbor_costs: BTreeMap::new(),
        coupled_ineq: None,
        terminal: None,
    };
    PwaNetwork::new(vec![sub], vec![vec![]], 1).expect("diag closed loop")
}

/// Zero gain for every mode of subsystem `i`.
pub fn zero_gain_map(net: &PwaNetwork, i: usize) -> BTreeMap<usize, DMatrix<f64>> {
    let sub = &net.subsystems[i];
    (0..sub.modes.len())
        .map(|l| (l, DMatrix::zeros(sub.input_dim, sub.state_dim)))
        .collect()
}

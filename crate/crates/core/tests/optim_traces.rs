//! Optimizer recurrences against traces from `oracles/optim_traces.py`,
//! which minimizes `0.5 * sum(a * (p - c)^2)` from a fixed start.

use ptkit::model::{ParamStore, Tensor, TrainableMask};
use ptkit::optim::{Optimizer, OptimizerKind};

const ADAMW: [[f64; 4]; 5] = [
    [0.48995000025, -0.9899000000277778, 1.9898000000869565, 0.2399750002],
    [0.47990844652445497, -0.9798033024717772, 1.9796022033904255, 0.2299637594591603],
    [0.4698805534322055, -0.9697114556066135, 1.9694074024292094, 0.21997554096878663],
    [0.45987171769046087, -0.9596260183953007, 1.9592163903225563, 0.21002018920731466],
    [0.4498875101610102, -0.9495485569285036, 1.9490299589879148, 0.20010813569718322],
];
const RADAM: [[f64; 4]; 10] = [
    [0.496, -0.964, 1.9885, 0.245],
    [0.49202105263157897, -0.9285684210526316, 1.9770302631578947, 0.24005263157894735],
    [0.48806377937463585, -0.8937178481258496, 1.9655917386871236, 0.23515925422412118],
    [0.48412879034659556, -0.8594601910126782, 1.9541853647767873, 0.23032118139687388],
    [0.48395605687999105, -0.8592883606247927, 1.954012434977671, 0.2301488752264568],
    [0.4836985513243608, -0.8590325025132308, 1.9537545648844663, 0.22989215552651487],
    [0.4833721805539167, -0.8587084525575676, 1.9534276642494743, 0.22956690835760446],
    [0.4829861154800523, -0.8583252990041405, 1.9530409046452424, 0.22918228322782178],
    [0.482546678973861, -0.8578892820788783, 1.9526006050449143, 0.22874458625627453],
    [0.4820586064478261, -0.8574050579504552, 1.952111491726572, 0.2282585422572158],
];
const ADAFACTOR: [[f64; 4]; 3] = [
    [0.49777111892478004, -0.993279905993019, 1.981490429719785, 0.24730403380368932],
    [0.4955401406032657, -0.986561724566081, 1.9629789103531123, 0.24461843800741212],
    [0.4933071105288787, -0.9798458623291957, 1.9444652828931908, 0.24194329887508664],
];

const A: [f64; 4] = [1.0, 3.0, 0.5, 2.0];
const C: [f64; 4] = [0.1, 0.2, -0.3, 0.0];
const P0: [f64; 4] = [0.5, -1.0, 2.0, 0.25];

fn objective(p: &[f64]) -> f64 {
    p.iter().zip(A.iter().zip(&C)).map(|(x, (a, c))| 0.5 * a * (x - c) * (x - c)).sum()
}

fn gradient(p: &[f64]) -> Vec<f64> {
    p.iter().zip(A.iter().zip(&C)).map(|(x, (a, c))| a * (x - c)).collect()
}

fn run(kind: &str, shape: Vec<usize>, lr: f64, steps: usize) -> Vec<Vec<f64>> {
    let mut params = ParamStore::default();
    params.push(Tensor::new("w", shape, P0.to_vec()));
    let mask = TrainableMask::all(&params);
    let mut opt = Optimizer::new(OptimizerKind::from_name(kind).unwrap(), lr, &params);
    (0..steps)
        .map(|_| {
            let g = gradient(&params.tensors()[0].data);
            opt.step(&mut params, &vec![Some(g)], &mask).unwrap();
            params.tensors()[0].data.clone()
        })
        .collect()
}

fn assert_trace(got: &[Vec<f64>], want: &[[f64; 4]]) {
    assert_eq!(got.len(), want.len());
    for (step, (g, w)) in got.iter().zip(want).enumerate() {
        for (a, b) in g.iter().zip(w) {
            assert!((a - b).abs() < 1e-12, "step {}: {g:?} vs {w:?}", step + 1);
        }
    }
}

#[test]
fn adamw_matches_reference() {
    assert_trace(&run("adamw", vec![4], 0.01, 5), &ADAMW);
}

#[test]
fn radam_matches_reference_across_rectification_onset() {
    assert_trace(&run("radam", vec![4], 0.01, 10), &RADAM);
}

#[test]
fn adafactor_factored_matches_reference() {
    assert_trace(&run("adafactor", vec![2, 2], 0.01, 3), &ADAFACTOR);
}

#[test]
fn every_optimizer_descends_a_convex_quadratic() {
    for kind in ["adafactor", "adamw", "radam"] {
        for shape in [vec![4], vec![2, 2]] {
            let mut last = objective(&P0);
            for (step, p) in run(kind, shape.clone(), 1e-3, 100).iter().enumerate() {
                let f = objective(p);
                assert!(f < last, "{kind} {shape:?} step {}: {f} after {last}", step + 1);
                last = f;
            }
        }
    }
}

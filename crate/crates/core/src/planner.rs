//! Stroke ordering as a generalized TSP: every stroke is a cluster of two
//! nodes (drawn forwards or reversed) and the tour visits one node per
//! cluster, minimizing pen-up travel along an open path from `home`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::drawing::{Point2, Polyline};

/// Largest instance the exhaustive solver accepts.
pub const BRUTE_FORCE_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Forward,
    Reverse,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::Forward => Orientation::Reverse,
            Orientation::Reverse => Orientation::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtspInstance {
    pub strokes: Vec<Polyline>,
    pub home: Point2,
}

impl GtspInstance {
    pub fn new(strokes: Vec<Polyline>, home: Point2) -> Result<Self> {
        if strokes.is_empty() {
            return Err(Error::Invalid("instance needs at least one stroke".into()));
        }
        if let Some(i) = strokes.iter().position(|s| s.len() < 2) {
            return Err(Error::Invalid(format!("stroke {i} has fewer than 2 points")));
        }
        Ok(GtspInstance { strokes, home })
    }

    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    pub fn entry(&self, stroke: usize, o: Orientation) -> Point2 {
        let s = &self.strokes[stroke];
        match o {
            Orientation::Forward => s[0],
            Orientation::Reverse => s[s.len() - 1],
        }
    }

    pub fn exit(&self, stroke: usize, o: Orientation) -> Point2 {
        self.entry(stroke, o.flipped())
    }

    /// The stroke's points in drawing order.
    pub fn oriented(&self, stroke: usize, o: Orientation) -> Polyline {
        let mut s = self.strokes[stroke].clone();
        if o == Orientation::Reverse {
            s.reverse();
        }
        s
    }
}

fn dist(a: Point2, b: Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlanStep {
    pub stroke: usize,
    pub orientation: Orientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokePlan {
    pub steps: Vec<PlanStep>,
    pub cost_mm: f64,
}

impl StrokePlan {
    fn from_steps(inst: &GtspInstance, steps: Vec<PlanStep>) -> Self {
        let cost_mm = plan_cost(inst, &steps);
        StrokePlan { steps, cost_mm }
    }

    /// True when every stroke appears exactly once.
    pub fn is_permutation_of(&self, inst: &GtspInstance) -> bool {
        let mut seen = vec![false; inst.len()];
        self.steps.len() == inst.len()
            && self.steps.iter().all(|s| {
                s.stroke < seen.len() && !std::mem::replace(&mut seen[s.stroke], true)
            })
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            order: Vec<usize>,
            orientations: Vec<Orientation>,
            cost_mm: f64,
            #[serde(skip)]
            _p: std::marker::PhantomData<&'a ()>,
        }
        serde_json::to_string_pretty(&Out {
            order: self.steps.iter().map(|s| s.stroke).collect(),
            orientations: self.steps.iter().map(|s| s.orientation).collect(),
            cost_mm: self.cost_mm,
            _p: std::marker::PhantomData,
        })
        .expect("plan serializes")
    }
}

/// Pen-up distance: home to the first entry, then each exit to the next entry.
pub fn plan_cost(inst: &GtspInstance, steps: &[PlanStep]) -> f64 {
    let mut pos = inst.home;
    let mut cost = 0.0;
    for s in steps {
        cost += dist(pos, inst.entry(s.stroke, s.orientation));
        pos = inst.exit(s.stroke, s.orientation);
    }
    cost
}

const ORIENTATIONS: [Orientation; 2] = [Orientation::Forward, Orientation::Reverse];

/// Greedy construction: repeatedly take the unvisited stroke/orientation
/// whose entry is nearest; ties go to the lower stroke index, then forward.
pub fn nearest_neighbor_plan(inst: &GtspInstance) -> StrokePlan {
    nearest_neighbor_from(inst, None)
}

/// Nearest neighbor, optionally forced to open with `first`.
fn nearest_neighbor_from(inst: &GtspInstance, first: Option<PlanStep>) -> StrokePlan {
    let mut visited = vec![false; inst.len()];
    let mut pos = inst.home;
    let mut steps = Vec::with_capacity(inst.len());
    if let Some(f) = first {
        visited[f.stroke] = true;
        pos = inst.exit(f.stroke, f.orientation);
        steps.push(f);
    }
    while steps.len() < inst.len() {
        let mut best: Option<(f64, PlanStep)> = None;
        for (i, _) in visited.iter().enumerate().filter(|(_, v)| !**v) {
            for o in ORIENTATIONS {
                let d = dist(pos, inst.entry(i, o));
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, PlanStep { stroke: i, orientation: o }));
                }
            }
        }
        let (_, step) = best.expect("an unvisited stroke remains");
        visited[step.stroke] = true;
        pos = inst.exit(step.stroke, step.orientation);
        steps.push(step);
    }
    StrokePlan::from_steps(inst, steps)
}

/// Reverses `steps[i..=j]` and flips the orientation of each reversed stroke.
fn reverse_segment(steps: &mut [PlanStep], i: usize, j: usize) {
    steps[i..=j].reverse();
    for s in &mut steps[i..=j] {
        s.orientation = s.orientation.flipped();
    }
}

/// Removes `steps[i..i + len]` and reinserts it at `at` in the remaining
/// sequence, traversed backwards when `rev`.
fn relocate(steps: &[PlanStep], i: usize, len: usize, at: usize, rev: bool) -> Vec<PlanStep> {
    let mut seg: Vec<PlanStep> = steps[i..i + len].to_vec();
    if rev {
        seg.reverse();
        for s in &mut seg {
            s.orientation = s.orientation.flipped();
        }
    }
    let mut rest: Vec<PlanStep> = steps[..i].iter().chain(&steps[i + len..]).copied().collect();
    rest.splice(at..at, seg);
    rest
}

/// Longest segment moved by or-opt.
const OR_OPT_MAX: usize = 3;

/// Local search, first-improvement, until no move lowers the cost. Moves:
/// segment reversal (reversed strokes are flipped too, so the segment is
/// traversed backwards; a one-stroke segment is an orientation flip) and
/// or-opt relocation of up to three consecutive strokes, either direction.
pub fn two_opt_improve(inst: &GtspInstance, plan: &StrokePlan) -> StrokePlan {
    const EPS: f64 = 1e-9;
    let mut steps = plan.steps.clone();
    let mut cost = plan_cost(inst, &steps);
    let n = steps.len();
    loop {
        let mut improved = false;
        for i in 0..n {
            for j in i..n {
                reverse_segment(&mut steps, i, j);
                let c = plan_cost(inst, &steps);
                if c < cost - EPS {
                    cost = c;
                    improved = true;
                } else {
                    reverse_segment(&mut steps, i, j);
                }
            }
        }
        for len in 1..=OR_OPT_MAX.min(n.saturating_sub(1)) {
            for i in 0..=n - len {
                for at in 0..=n - len {
                    for rev in [false, true] {
                        if at == i && !rev {
                            continue;
                        }
                        let cand = relocate(&steps, i, len, at, rev);
                        let c = plan_cost(inst, &cand);
                        if c < cost - EPS {
                            steps = cand;
                            cost = c;
                            improved = true;
                        }
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    StrokePlan { steps, cost_mm: cost }
}

/// Local search from the nearest-neighbor tour and from nearest-neighbor
/// tours forced to open with each stroke in each orientation; the cheapest
/// result wins, ties going to the earlier start.
pub fn plan_strokes(inst: &GtspInstance) -> StrokePlan {
    let mut best = two_opt_improve(inst, &nearest_neighbor_plan(inst));
    for stroke in 0..inst.len() {
        for orientation in ORIENTATIONS {
            let start = nearest_neighbor_from(inst, Some(PlanStep { stroke, orientation }));
            let cand = two_opt_improve(inst, &start);
            if cand.cost_mm < best.cost_mm - 1e-9 {
                best = cand;
            }
        }
    }
    best
}

/// Exhaustive search over all `n! 2^n` plans. Among equal-cost optima the
/// lexicographically smallest step sequence wins.
pub fn brute_force_optimal(inst: &GtspInstance) -> Result<StrokePlan> {
    let n = inst.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::Invalid(format!(
            "brute force limited to {BRUTE_FORCE_MAX} strokes, got {n}"
        )));
    }
    struct Search<'a> {
        inst: &'a GtspInstance,
        used: Vec<bool>,
        cur: Vec<PlanStep>,
        best: Vec<PlanStep>,
        best_cost: f64,
    }
    impl Search<'_> {
        fn go(&mut self, pos: Point2, cost: f64) {
            if cost >= self.best_cost {
                return;
            }
            if self.cur.len() == self.inst.len() {
                self.best_cost = cost;
                self.best = self.cur.clone();
                return;
            }
            for i in 0..self.inst.len() {
                if self.used[i] {
                    continue;
                }
                self.used[i] = true;
                for o in ORIENTATIONS {
                    let step = PlanStep { stroke: i, orientation: o };
                    self.cur.push(step);
                    let c = cost + dist(pos, self.inst.entry(i, o));
                    self.go(self.inst.exit(i, o), c);
                    self.cur.pop();
                }
                self.used[i] = false;
            }
        }
    }
    let mut s = Search {
        inst,
        used: vec![false; n],
        cur: Vec::with_capacity(n),
        best: Vec::new(),
        best_cost: f64::INFINITY,
    };
    s.go(inst.home, 0.0);
    Ok(StrokePlan::from_steps(inst, s.best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::noise::derived_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn step(stroke: usize, orientation: Orientation) -> PlanStep {
        PlanStep { stroke, orientation }
    }
    use Orientation::{Forward as F, Reverse as R};

    pub(crate) fn random_instance(seed: u64, n: usize) -> GtspInstance {
        let mut rng = derived_rng(seed, &[77, n as u64]);
        let strokes = (0..n)
            .map(|_| {
                (0..rng.gen_range(2..5))
                    .map(|_| [rng.gen_range(0.0..80.0), rng.gen_range(0.0..80.0)])
                    .collect()
            })
            .collect();
        GtspInstance::new(strokes, [rng.gen_range(0.0..80.0), rng.gen_range(0.0..80.0)]).unwrap()
    }

    #[test]
    fn single_stroke_cost_is_home_distance() {
        let inst = GtspInstance::new(vec![vec![[3.0, 4.0], [10.0, 4.0]]], [0.0, 0.0]).unwrap();
        assert_eq!(plan_cost(&inst, &[step(0, F)]), 5.0);
    }

    #[test]
    fn end_to_end_strokes_cost_only_home_leg() {
        let inst = GtspInstance::new(
            vec![vec![[1.0, 0.0], [5.0, 0.0]], vec![[5.0, 0.0], [9.0, 0.0]]],
            [0.0, 0.0],
        )
        .unwrap();
        assert_eq!(plan_cost(&inst, &[step(0, F), step(1, F)]), 1.0);
    }

    #[test]
    fn three_stroke_hand_computed_cost() {
        let inst = GtspInstance::new(
            vec![
                vec![[0.0, 3.0], [0.0, 10.0]],
                vec![[6.0, 10.0], [6.0, 0.0]],
                vec![[10.0, 0.0], [20.0, 0.0]],
            ],
            [0.0, 0.0],
        )
        .unwrap();
        // 3 (home->s0) + 6 (s0 end -> s1 start) + 5 (s2 end (20,0) reversed entry -> ... )
        let steps = [step(0, F), step(1, F), step(2, R)];
        // home->(0,3)=3; (0,10)->(6,10)=6; (6,0)->(20,0)=14
        assert_eq!(plan_cost(&inst, &steps), 23.0);
    }

    #[test]
    fn nn_single_stroke_takes_nearer_end() {
        let inst = GtspInstance::new(vec![vec![[10.0, 0.0], [1.0, 0.0]]], [0.0, 0.0]).unwrap();
        assert_eq!(nearest_neighbor_plan(&inst).steps, vec![step(0, R)]);
        let tie = GtspInstance::new(vec![vec![[-1.0, 0.0], [1.0, 0.0]]], [0.0, 0.0]).unwrap();
        assert_eq!(nearest_neighbor_plan(&tie).steps, vec![step(0, F)]);
    }

    #[test]
    fn nn_recovers_left_to_right_order() {
        // strokes on the x axis in scrambled index order
        let xs = [30.0, 10.0, 50.0, 0.0, 20.0, 40.0];
        let strokes = xs.iter().map(|&x| vec![[x, 0.0], [x + 5.0, 0.0]]).collect();
        let inst = GtspInstance::new(strokes, [-1.0, 0.0]).unwrap();
        let plan = nearest_neighbor_plan(&inst);
        let order: Vec<f64> = plan.steps.iter().map(|s| xs[s.stroke]).collect();
        assert_eq!(order, vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0]);
        assert!(plan.steps.iter().all(|s| s.orientation == F));
    }

    #[test]
    fn two_opt_keeps_optimal_plan() {
        let inst = GtspInstance::new(
            vec![vec![[1.0, 0.0], [5.0, 0.0]], vec![[5.0, 0.0], [9.0, 0.0]]],
            [0.0, 0.0],
        )
        .unwrap();
        let plan = StrokePlan::from_steps(&inst, vec![step(0, F), step(1, F)]);
        assert_eq!(two_opt_improve(&inst, &plan), plan);
    }

    #[test]
    fn two_opt_uncrosses() {
        // visiting the far stroke first makes the pen-up legs cross
        let inst = GtspInstance::new(
            vec![vec![[0.0, 10.0], [0.0, 20.0]], vec![[10.0, 20.0], [10.0, 10.0]]],
            [0.0, 0.0],
        )
        .unwrap();
        let crossed = StrokePlan::from_steps(&inst, vec![step(1, F), step(0, R)]);
        let better = two_opt_improve(&inst, &crossed);
        assert!(better.cost_mm < crossed.cost_mm);
        assert_eq!(better.steps, vec![step(0, F), step(1, F)]);
        assert_eq!(better.cost_mm, 20.0);
    }

    #[test]
    fn brute_force_picks_reversal() {
        let inst = GtspInstance::new(
            vec![vec![[0.0, 0.0], [10.0, 0.0]], vec![[30.0, 0.0], [11.0, 0.0]]],
            [0.0, 0.0],
        )
        .unwrap();
        // enumerate all 8 plans independently
        let mut all = Vec::new();
        for a in 0..2 {
            for oa in ORIENTATIONS {
                for ob in ORIENTATIONS {
                    let steps = vec![step(a, oa), step(1 - a, ob)];
                    all.push((plan_cost(&inst, &steps), steps));
                }
            }
        }
        assert_eq!(all.len(), 8);
        let min = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let best = brute_force_optimal(&inst).unwrap();
        assert_eq!(best.cost_mm, min);
        assert_eq!(best.steps, vec![step(0, F), step(1, R)]);
        assert_eq!(best.cost_mm, plan_cost(&inst, &best.steps));
    }

    #[test]
    fn brute_force_single_stroke_and_size_limit() {
        let inst = GtspInstance::new(vec![vec![[10.0, 0.0], [1.0, 0.0]]], [0.0, 0.0]).unwrap();
        assert_eq!(brute_force_optimal(&inst).unwrap().steps, vec![step(0, R)]);
        assert!(brute_force_optimal(&random_instance(1, 9)).is_err());
    }

    #[test]
    fn invalid_instances() {
        assert!(GtspInstance::new(vec![], [0.0, 0.0]).is_err());
        assert!(GtspInstance::new(vec![vec![[0.0, 0.0]]], [0.0, 0.0]).is_err());
    }

    #[test]
    fn local_search_never_worsens() {
        for seed in 0..100 {
            let inst = random_instance(seed, 2 + (seed as usize % 7));
            let nn = nearest_neighbor_plan(&inst);
            let improved = two_opt_improve(&inst, &nn);
            assert!(improved.cost_mm <= nn.cost_mm + 1e-12);
            assert!(improved.is_permutation_of(&inst));
        }
    }

    #[test]
    fn plan_strokes_near_optimal() {
        for seed in 0..60 {
            let inst = random_instance(seed, 1 + (seed as usize % 7));
            let plan = plan_strokes(&inst);
            let opt = brute_force_optimal(&inst).unwrap().cost_mm;
            assert!(plan.cost_mm <= 1.05 * opt + 1e-9, "seed {seed}: {} vs {opt}", plan.cost_mm);
            assert!(plan.cost_mm <= nearest_neighbor_plan(&inst).cost_mm + 1e-9);
        }
    }

    #[test]
    fn or_opt_moves_stroke_back() {
        let steps = [step(0, F), step(1, F), step(2, F)];
        assert_eq!(relocate(&steps, 2, 1, 0, true), vec![step(2, R), step(0, F), step(1, F)]);
        assert_eq!(relocate(&steps, 0, 2, 1, true), vec![step(2, F), step(1, R), step(0, R)]);
    }

    proptest! {
        #[test]
        fn translation_invariance(seed in 0u64..1000, dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
            let inst = random_instance(seed, 5);
            let moved = GtspInstance::new(
                inst.strokes.iter().map(|s| s.iter().map(|p| [p[0] + dx, p[1] + dy]).collect()).collect(),
                [inst.home[0] + dx, inst.home[1] + dy],
            ).unwrap();
            let a = brute_force_optimal(&inst).unwrap();
            let b = brute_force_optimal(&moved).unwrap();
            prop_assert!((a.cost_mm - b.cost_mm).abs() < 1e-9);
            prop_assert!((plan_cost(&moved, &a.steps) - a.cost_mm).abs() < 1e-9);
        }
    }
}

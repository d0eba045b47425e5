//! Per-layer convolution algorithm assignment.
//!
//! Choose exactly one algorithm for every convolution layer so that the sum of
//! workspace memory fits the budget and the summed time is minimal. This is a
//! multiple-choice knapsack; instances are small (tens of layers, a handful
//! of algorithms) so it is solved exactly by depth-first branch and bound.
//!
//! Optimal solutions are ordered by `(total_time, total_memory, names)`
//! where `names` is the algorithm sequence in layer order compared
//! lexicographically. Both [`solve_selection`] and [`brute_force_selection`]
//! return the minimum under that order, so on the same instance they agree
//! exactly unless float rounding inside the dominance filter makes two
//! different assignments sum to the same time.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{AlgorithmCatalog, AlgorithmId, Cost};
use crate::memory::{Bits, SignedBits};

/// Brute force refuses instances with more assignments than this.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Relative slack on the time lower bound. Partial sums and the full sum
/// round differently, so pruning only when the bound clearly exceeds the
/// incumbent keeps the search exact.
const PRUNE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Layer id (1-based convolution index) to chosen algorithm.
    #[serde(deserialize_with = "layer_keys")]
    pub assignment: BTreeMap<u32, AlgorithmId>,
    pub total_time: f64,
    pub total_memory: Bits,
}

// JSON object keys are strings, and tagged enums buffer their content, so
// integer keys have to be parsed by hand.
fn layer_keys<'de, D>(de: D) -> Result<BTreeMap<u32, AlgorithmId>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::de::Error as _;
    BTreeMap::<String, AlgorithmId>::deserialize(de)?
        .into_iter()
        .map(|(k, v)| {
            k.parse()
                .map(|k| (k, v))
                .map_err(|_| D::Error::custom(format!("bad layer id {k:?}")))
        })
        .collect()
}

impl Selection {
    /// Recompute totals from the catalog; `None` if an assigned entry is
    /// missing.
    pub fn recompute(&self, catalog: &AlgorithmCatalog, batch_size: u64) -> Option<(f64, Bits)> {
        let mut time = 0.0;
        let mut memory: Bits = 0;
        for (&layer, algo) in &self.assignment {
            let cost = catalog.query(layer, algo, batch_size)?;
            time += cost.time;
            memory = memory.checked_add(cost.memory)?;
        }
        Some((time, memory))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("no assignment fits {bound} bits; the leanest assignment needs {min_memory} bits")]
    Infeasible {
        bound: SignedBits,
        min_memory: Bits,
    },
    #[error("layer {layer_id} has no algorithm at batch size {batch_size}")]
    MissingLayer { layer_id: u32, batch_size: u64 },
    #[error("{assignments} assignments exceed the brute-force limit of {BRUTE_FORCE_LIMIT}")]
    InstanceTooLarge { assignments: u128 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub name: AlgorithmId,
    pub cost: Cost,
}

/// One assignment problem: the available choices for each layer, in layer
/// order. Every layer must offer at least one choice.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    layers: Vec<Vec<Choice>>,
}

impl Instance {
    /// `layers[k]` holds the choices of layer `k + 1`.
    pub fn new(layers: Vec<Vec<Choice>>) -> Result<Self, SelectError> {
        if let Some(k) = layers.iter().position(|c| c.is_empty()) {
            return Err(SelectError::MissingLayer {
                layer_id: k as u32 + 1,
                batch_size: 0,
            });
        }
        Ok(Self { layers })
    }

    pub fn from_catalog(catalog: &AlgorithmCatalog, batch_size: u64) -> Result<Self, SelectError> {
        let layers = (1..=catalog.layer_count())
            .map(|layer_id| {
                let opts: Vec<_> = catalog
                    .options(layer_id, batch_size)
                    .into_iter()
                    .map(|(name, cost)| Choice { name, cost })
                    .collect();
                if opts.is_empty() {
                    Err(SelectError::MissingLayer {
                        layer_id,
                        batch_size,
                    })
                } else {
                    Ok(opts)
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn choices(&self, layer_id: u32) -> &[Choice] {
        &self.layers[layer_id as usize - 1]
    }

    /// Memory of the leanest assignment.
    pub fn min_memory(&self) -> Bits {
        min_memory(&self.layers)
    }

    pub fn solve(&self, memory_bound: SignedBits) -> Result<Selection, SelectError> {
        branch_and_bound(&self.layers, memory_bound)
    }

    pub fn brute_force(&self, memory_bound: SignedBits) -> Result<Selection, SelectError> {
        enumerate(&self.layers, memory_bound)
    }
}

fn min_memory(layers: &[Vec<Choice>]) -> Bits {
    layers
        .iter()
        .map(|opts| opts.iter().map(|o| o.cost.memory).min().unwrap_or(0))
        .fold(0, Bits::saturating_add)
}

/// Order on complete assignments given as per-layer option references.
fn compare(a: (f64, Bits, &[&AlgorithmId]), b: (f64, Bits, &[&AlgorithmId])) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.cmp(&b.1))
        .then_with(|| a.2.cmp(b.2))
}

fn fits(memory: Bits, bound: SignedBits) -> bool {
    bound >= 0 && memory <= bound as Bits
}

struct Search<'a> {
    layers: Vec<Vec<&'a Choice>>,
    suffix_time: Vec<f64>,
    suffix_memory: Vec<Bits>,
    bound: SignedBits,
    path: Vec<&'a AlgorithmId>,
    best: Option<(f64, Bits, Vec<&'a AlgorithmId>)>,
}

impl<'a> Search<'a> {
    fn run(&mut self, depth: usize, time: f64, memory: Bits) {
        if depth == self.layers.len() {
            let candidate = (time, memory, self.path.as_slice());
            let better = match &self.best {
                None => true,
                Some((t, m, names)) => compare(candidate, (*t, *m, names)) == Ordering::Less,
            };
            if better {
                self.best = Some((time, memory, self.path.clone()));
            }
            return;
        }
        if !fits(memory.saturating_add(self.suffix_memory[depth]), self.bound) {
            return;
        }
        if let Some((best_time, _, _)) = &self.best {
            let lower = time + self.suffix_time[depth];
            if lower > best_time + best_time.abs() * PRUNE_SLACK {
                return;
            }
        }
        for i in 0..self.layers[depth].len() {
            let opt = self.layers[depth][i];
            let next_memory = memory.saturating_add(opt.cost.memory);
            if !fits(next_memory, self.bound) {
                continue;
            }
            self.path.push(&opt.name);
            self.run(depth + 1, time + opt.cost.time, next_memory);
            self.path.pop();
        }
    }
}

/// Drop options another option beats or ties on time and memory, keeping
/// the lexicographically smaller name among exact ties. Survivors are sorted
/// fastest first.
fn undominated(opts: &[Choice]) -> Vec<&Choice> {
    let mut kept: Vec<&Choice> = opts
        .iter()
        .filter(|a| {
            !opts.iter().any(|b| {
                b.cost.time <= a.cost.time
                    && b.cost.memory <= a.cost.memory
                    && (b.cost.time < a.cost.time
                        || b.cost.memory < a.cost.memory
                        || b.name < a.name)
            })
        })
        .collect();
    kept.sort_by(|a, b| {
        a.cost
            .time
            .total_cmp(&b.cost.time)
            .then(a.cost.memory.cmp(&b.cost.memory))
            .then_with(|| a.name.cmp(&b.name))
    });
    kept
}

fn build_selection(
    layers: &[Vec<Choice>],
    names: &[&AlgorithmId],
    time: f64,
    memory: Bits,
) -> Selection {
    debug_assert_eq!(layers.len(), names.len());
    Selection {
        assignment: names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u32 + 1, (*n).clone()))
            .collect(),
        total_time: time,
        total_memory: memory,
    }
}

/// Exact minimum-time assignment within `memory_bound` bits.
pub fn solve_selection(
    catalog: &AlgorithmCatalog,
    batch_size: u64,
    memory_bound: SignedBits,
) -> Result<Selection, SelectError> {
    Instance::from_catalog(catalog, batch_size)?.solve(memory_bound)
}

fn branch_and_bound(layers: &[Vec<Choice>], memory_bound: SignedBits) -> Result<Selection, SelectError> {
    let min_mem = min_memory(layers);
    if !fits(min_mem, memory_bound) {
        return Err(SelectError::Infeasible {
            bound: memory_bound,
            min_memory: min_mem,
        });
    }

    let pruned: Vec<Vec<&Choice>> = layers.iter().map(|o| undominated(o)).collect();
    let n = pruned.len();
    let mut suffix_time = vec![0.0; n + 1];
    let mut suffix_memory = vec![0; n + 1];
    for k in (0..n).rev() {
        let fastest = pruned[k].iter().map(|o| o.cost.time).fold(f64::INFINITY, f64::min);
        let leanest = pruned[k].iter().map(|o| o.cost.memory).min().unwrap_or(0);
        suffix_time[k] = suffix_time[k + 1] + fastest;
        suffix_memory[k] = suffix_memory[k + 1] + leanest;
    }

    let mut search = Search {
        layers: pruned,
        suffix_time,
        suffix_memory,
        bound: memory_bound,
        path: Vec::with_capacity(n),
        best: None,
    };
    search.run(0, 0.0, 0);

    match search.best {
        Some((time, memory, names)) => Ok(build_selection(layers, &names, time, memory)),
        // Unreachable when the leanest assignment fits, kept for safety.
        None => Err(SelectError::Infeasible {
            bound: memory_bound,
            min_memory: min_mem,
        }),
    }
}

/// Exhaustive enumeration with the same ordering as [`solve_selection`].
/// Only meant as a verification oracle.
pub fn brute_force_selection(
    catalog: &AlgorithmCatalog,
    batch_size: u64,
    memory_bound: SignedBits,
) -> Result<Selection, SelectError> {
    Instance::from_catalog(catalog, batch_size)?.brute_force(memory_bound)
}

fn enumerate(layers: &[Vec<Choice>], memory_bound: SignedBits) -> Result<Selection, SelectError> {
    let assignments = layers
        .iter()
        .try_fold(1u128, |acc, o| acc.checked_mul(o.len() as u128))
        .unwrap_or(u128::MAX);
    if assignments > BRUTE_FORCE_LIMIT {
        return Err(SelectError::InstanceTooLarge { assignments });
    }

    let mut best: Option<(f64, Bits, Vec<&AlgorithmId>)> = None;
    let mut index = vec![0usize; layers.len()];
    loop {
        let mut time = 0.0;
        let mut memory: Bits = 0;
        let mut names = Vec::with_capacity(layers.len());
        for (opts, &i) in layers.iter().zip(&index) {
            time += opts[i].cost.time;
            memory = memory.saturating_add(opts[i].cost.memory);
            names.push(&opts[i].name);
        }
        if fits(memory, memory_bound) {
            let better = match &best {
                None => true,
                Some((t, m, n)) => compare((time, memory, &names), (*t, *m, n)) == Ordering::Less,
            };
            if better {
                best = Some((time, memory, names));
            }
        }

        // odometer increment
        let mut pos = layers.len();
        loop {
            if pos == 0 {
                return match best {
                    Some((time, memory, names)) => Ok(build_selection(layers, &names, time, memory)),
                    None => Err(SelectError::Infeasible {
                        bound: memory_bound,
                        min_memory: min_memory(layers),
                    }),
                };
            }
            pos -= 1;
            index[pos] += 1;
            if index[pos] < layers[pos].len() {
                break;
            }
            index[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CostEntry;

    fn catalog(rows: &[(u32, &str, f64, Bits)]) -> AlgorithmCatalog {
        AlgorithmCatalog::from_entries(
            rows.iter()
                .map(|&(l, a, t, m)| CostEntry::new(l, a, 1, t, m).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn names(sel: &Selection) -> Vec<&str> {
        sel.assignment.values().map(|a| a.as_str()).collect()
    }

    #[test]
    fn only_feasible_choice() {
        let cat = catalog(&[(1, "slow", 5.0, 100), (1, "fast", 2.0, 1000)]);
        let sel = solve_selection(&cat, 1, 500).unwrap();
        assert_eq!(names(&sel), ["slow"]);
        assert_eq!(sel.total_time, 5.0);
        assert_eq!(sel.total_memory, 100);
        let sel = solve_selection(&cat, 1, 1000).unwrap();
        assert_eq!(names(&sel), ["fast"]);
    }

    #[test]
    fn negative_bound_is_infeasible() {
        let cat = catalog(&[(1, "a", 1.0, 0), (1, "b", 0.5, 10)]);
        for solve in [solve_selection, brute_force_selection] {
            assert_eq!(
                solve(&cat, 1, -1),
                Err(SelectError::Infeasible { bound: -1, min_memory: 0 })
            );
        }
    }

    #[test]
    fn infeasible_reports_leanest() {
        let cat = catalog(&[(1, "a", 1.0, 30), (1, "b", 0.5, 40), (2, "a", 1.0, 20)]);
        assert_eq!(
            solve_selection(&cat, 1, 49),
            Err(SelectError::Infeasible { bound: 49, min_memory: 50 })
        );
    }

    #[test]
    fn three_layers_match_enumeration() {
        // All 8 assignments enumerated by hand:
        //   times  (a,a,a)=6 (a,a,b)=5 (a,b,a)=4.5 (a,b,b)=3.5
        //          (b,a,a)=5 (b,a,b)=4 (b,b,a)=3.5 (b,b,b)=2.5
        //   memory (a,a,a)=30 (a,a,b)=50 (a,b,a)=60 (a,b,b)=80
        //          (b,a,a)=70 (b,a,b)=90 (b,b,a)=100 (b,b,b)=120
        let cat = catalog(&[
            (1, "a", 2.0, 10),
            (1, "b", 1.0, 50),
            (2, "a", 2.0, 10),
            (2, "b", 0.5, 40),
            (3, "a", 2.0, 10),
            (3, "b", 1.0, 30),
        ]);
        let expect = [
            (29, None),
            (30, Some(6.0)),
            (50, Some(5.0)),
            (60, Some(4.5)),
            (79, Some(4.5)),
            (80, Some(3.5)),
            (119, Some(3.5)),
            (120, Some(2.5)),
        ];
        for (bound, time) in expect {
            let fast = solve_selection(&cat, 1, bound).ok().map(|s| s.total_time);
            let brute = brute_force_selection(&cat, 1, bound).ok().map(|s| s.total_time);
            assert_eq!(fast, time, "bound {bound}");
            assert_eq!(brute, time, "bound {bound}");
        }
        // (a,b,b) and (b,b,a) tie at 3.5; (a,b,b) uses less memory.
        let sel = solve_selection(&cat, 1, 100).unwrap();
        assert_eq!(names(&sel), ["a", "b", "b"]);
    }

    #[test]
    fn equal_time_and_memory_prefers_smaller_names() {
        let cat = catalog(&[(1, "zeta", 1.0, 5), (1, "alpha", 1.0, 5), (2, "x", 1.0, 1)]);
        for solve in [solve_selection, brute_force_selection] {
            assert_eq!(names(&solve(&cat, 1, 100).unwrap()), ["alpha", "x"]);
        }
    }

    #[test]
    fn single_algorithm_catalog() {
        let cat = catalog(&[(1, "gemm", 1.0, 10), (2, "gemm", 2.0, 10)]);
        let sel = brute_force_selection(&cat, 1, 20).unwrap();
        assert_eq!(names(&sel), ["gemm", "gemm"]);
        assert_eq!(sel.total_time, 3.0);
        assert!(matches!(
            brute_force_selection(&cat, 1, 19),
            Err(SelectError::Infeasible { min_memory: 20, .. })
        ));
    }

    #[test]
    fn no_layers_is_vacuous() {
        let inst = Instance::new(vec![]).unwrap();
        for sel in [inst.solve(0).unwrap(), inst.brute_force(0).unwrap()] {
            assert!(sel.assignment.is_empty());
            assert_eq!(sel.total_time, 0.0);
            assert_eq!(sel.total_memory, 0);
        }
    }

    #[test]
    fn missing_batch_size() {
        let cat = catalog(&[(1, "gemm", 1.0, 10)]);
        assert_eq!(
            solve_selection(&cat, 2, 100),
            Err(SelectError::MissingLayer { layer_id: 1, batch_size: 2 })
        );
    }

    #[test]
    fn brute_force_guard() {
        // 4 algorithms over 12 layers: 4^12 = 16.7M assignments.
        let rows: Vec<_> = (1..=12)
            .flat_map(|l| ["a", "b", "c", "d"].map(|a| (l, a, 1.0, 1)))
            .collect();
        let cat = catalog(&rows);
        assert!(matches!(
            brute_force_selection(&cat, 1, 100),
            Err(SelectError::InstanceTooLarge { assignments: 16_777_216 })
        ));
        assert!(solve_selection(&cat, 1, 100).is_ok());
    }

    #[test]
    fn recompute_matches_totals() {
        let cat = catalog(&[(1, "a", 0.1, 3), (1, "b", 0.2, 1), (2, "a", 0.3, 7)]);
        let sel = solve_selection(&cat, 1, 10).unwrap();
        assert_eq!(sel.recompute(&cat, 1), Some((sel.total_time, sel.total_memory)));
    }
}

//! Planted-structure data: per-entity cluster indicators, per-matrix
//! association patterns, and matrices `X = J_r · A · J_cᵀ` with rows and
//! columns shuffled.
//!
//! Each entity gets one instance permutation that is shared by every matrix
//! it appears in, so instance `i` of an entity refers to the same object in
//! all of its matrices. `row_perms[m]`/`col_perms[m]` record the permutation
//! of matrix `m`'s row and column entity: observed row `i` is original row
//! `row_perms[m][i]`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clustering::{to_vigorous, ClusterIndicator, VigorousIndicator};
use crate::error::{Error, Result};
use crate::model::{build_graph, DataMatrix, DataType, Entity, EntityMatrixGraph};

pub const DEFAULT_STRENGTH: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    #[serde(default)]
    pub names: Vec<String>,
    pub entity_sizes: Vec<usize>,
    pub ks: Vec<usize>,
    /// `(row entity, column entity)` per matrix.
    pub schema: Vec<(usize, usize)>,
    /// Per-matrix `k_r x k_c` masks; nonzero entries are filled with `strength`.
    /// Empty means [`default_pattern`] for every matrix.
    #[serde(default)]
    pub patterns: Vec<Vec<Vec<f64>>>,
    #[serde(default = "default_strength")]
    pub strength: f64,
    /// Standard deviation of additive Gaussian noise. Zero reproduces the
    /// noiseless plant.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_strength() -> f64 {
    DEFAULT_STRENGTH
}

impl PlantSpec {
    /// Three matrices over four entities in the layout
    /// `X1: (p, r)`, `X2: (p, t)`, `X3: (s, r)` with 400/200/240/240
    /// instances and four clusters each. The patterns are one-to-one so that
    /// the chain `X3[3,1] → X1[0,1] → X2[0,2]` is the strongest path from
    /// cluster 3 of `s`.
    pub fn four_entity(seed: u64) -> Self {
        let perm = |targets: [usize; 4]| -> Vec<Vec<f64>> {
            (0..4)
                .map(|u| (0..4).map(|v| if targets[u] == v { 1.0 } else { 0.0 }).collect())
                .collect()
        };
        Self {
            names: vec!["p".into(), "r".into(), "t".into(), "s".into()],
            entity_sizes: vec![400, 200, 240, 240],
            ks: vec![4; 4],
            schema: vec![(0, 1), (0, 2), (3, 1)],
            patterns: vec![perm([1, 0, 3, 2]), perm([2, 3, 0, 1]), perm([0, 2, 3, 1])],
            strength: DEFAULT_STRENGTH,
            noise: 0.0,
            seed,
        }
    }

    fn pattern(&self, m: usize) -> Array2<f64> {
        let (r, c) = self.schema[m];
        match self.patterns.get(m) {
            Some(rows) => Array2::from_shape_fn((rows.len(), rows.first().map_or(0, Vec::len)), |(u, v)| {
                if rows[u][v] != 0.0 {
                    1.0
                } else {
                    0.0
                }
            }),
            None => default_pattern(self.ks[r], self.ks[c], m),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.entity_sizes.len();
        if self.ks.len() != n {
            return Err(Error::InfeasibleSpec(format!(
                "{} cluster counts for {n} entities",
                self.ks.len()
            )));
        }
        if !self.names.is_empty() && self.names.len() != n {
            return Err(Error::InfeasibleSpec(format!("{} names for {n} entities", self.names.len())));
        }
        for (e, (&d, &k)) in self.entity_sizes.iter().zip(&self.ks).enumerate() {
            if k == 0 || d < k {
                return Err(Error::InfeasibleSpec(format!(
                    "entity {e} has {d} instances for {k} clusters"
                )));
            }
        }
        if !self.patterns.is_empty() && self.patterns.len() != self.schema.len() {
            return Err(Error::InfeasibleSpec(format!(
                "{} patterns for {} matrices",
                self.patterns.len(),
                self.schema.len()
            )));
        }
        for (m, &(r, c)) in self.schema.iter().enumerate() {
            if r >= n || c >= n {
                return Err(Error::InfeasibleSpec(format!("matrix {m} references a missing entity")));
            }
            let p = self.pattern(m);
            if p.dim() != (self.ks[r], self.ks[c]) || self.patterns.get(m).is_some_and(|rows| rows.iter().any(|row| row.len() != self.ks[c])) {
                return Err(Error::InfeasibleSpec(format!(
                    "pattern {m} must be {}x{}",
                    self.ks[r], self.ks[c]
                )));
            }
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InfeasibleSpec(format!("noise {}", self.noise)));
        }
        Ok(())
    }
}

/// One-to-one style mask: row cluster `u` links to column `(u + shift) mod k_c`,
/// and any column left uncovered links back to row `v mod k_r`.
pub fn default_pattern(k_r: usize, k_c: usize, shift: usize) -> Array2<f64> {
    let mut p = Array2::zeros((k_r, k_c));
    for u in 0..k_r {
        p[[u, (u + shift) % k_c]] = 1.0;
    }
    for v in 0..k_c {
        if p.column(v).sum() == 0.0 {
            p[[v % k_r, v]] = 1.0;
        }
    }
    p
}

#[derive(Debug, Clone)]
pub struct PlantTruth {
    /// Per entity, in observed (permuted) instance order.
    pub indicators: Vec<ClusterIndicator>,
    pub vigorous: Vec<VigorousIndicator>,
    /// `strength · pattern` per matrix.
    pub associations: Vec<Array2<f64>>,
    pub row_perms: Vec<Vec<usize>>,
    pub col_perms: Vec<Vec<usize>>,
    /// Per entity instance permutation.
    pub entity_perms: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub entities: Vec<Entity>,
    pub matrices: Vec<DataMatrix>,
    pub truth: PlantTruth,
    /// Matrices before shuffling, rows and columns grouped by cluster.
    pub unpermuted: Vec<Array2<f64>>,
}

impl Plant {
    pub fn graph(&self) -> Result<EntityMatrixGraph> {
        build_graph(self.entities.clone(), self.matrices.clone())
    }
}

fn draw_sizes(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut sizes = vec![1usize; k];
    for _ in k..d {
        sizes[rng.random_range(0..k)] += 1;
    }
    sizes
}

pub fn generate(spec: &PlantSpec) -> Result<Plant> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.entity_sizes.len();

    let mut labels_orig = Vec::with_capacity(n);
    let mut j_orig = Vec::with_capacity(n);
    let mut entity_perms = Vec::with_capacity(n);
    let mut indicators = Vec::with_capacity(n);
    let mut vigorous = Vec::with_capacity(n);
    for e in 0..n {
        let (d, k) = (spec.entity_sizes[e], spec.ks[e]);
        let sizes = draw_sizes(d, k, &mut rng);
        let labels: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(u, &s)| std::iter::repeat_n(u, s))
            .collect();
        let ind = ClusterIndicator::new(labels.clone(), k)?;
        j_orig.push(to_vigorous(&ind)?);
        let mut perm: Vec<usize> = (0..d).collect();
        perm.shuffle(&mut rng);
        let observed = ClusterIndicator::new(perm.iter().map(|&i| labels[i]).collect(), k)?;
        vigorous.push(to_vigorous(&observed)?);
        indicators.push(observed);
        labels_orig.push(labels);
        entity_perms.push(perm);
    }

    let noise = if spec.noise > 0.0 {
        Some(Normal::new(0.0, spec.noise).map_err(|e| Error::InfeasibleSpec(e.to_string()))?)
    } else {
        None
    };
    let mut matrices = Vec::with_capacity(spec.schema.len());
    let mut unpermuted = Vec::with_capacity(spec.schema.len());
    let mut associations = Vec::with_capacity(spec.schema.len());
    let (mut row_perms, mut col_perms) = (Vec::new(), Vec::new());
    for (m, &(r, c)) in spec.schema.iter().enumerate() {
        let a = spec.pattern(m) * spec.strength;
        let (lr, lc) = (&labels_orig[r], &labels_orig[c]);
        let (jr, jc) = (&j_orig[r].j, &j_orig[c].j);
        let x = Array2::from_shape_fn((lr.len(), lc.len()), |(i, j)| {
            jr[[i, lr[i]]] * a[[lr[i], lc[j]]] * jc[[j, lc[j]]]
        });
        let (pr, pc) = (&entity_perms[r], &entity_perms[c]);
        let mut observed = Array2::from_shape_fn(x.dim(), |(i, j)| x[[pr[i], pc[j]]]);
        if let Some(dist) = &noise {
            observed.mapv_inplace(|v| v + dist.sample(&mut rng));
        }
        matrices.push(DataMatrix::new(m, r, c, observed, DataType::Real));
        unpermuted.push(x);
        associations.push(a);
        row_perms.push(pr.clone());
        col_perms.push(pc.clone());
    }

    let entities = (0..n)
        .map(|e| {
            let name = spec.names.get(e).cloned().unwrap_or_else(|| format!("e{e}"));
            Entity::new(e, name, spec.entity_sizes[e], spec.ks[e])
        })
        .collect();
    Ok(Plant {
        entities,
        matrices,
        truth: PlantTruth {
            indicators,
            vigorous,
            associations,
            row_perms,
            col_perms,
            entity_perms,
        },
        unpermuted,
    })
}

/// Undoes the recorded row and column shuffles of a generated matrix.
pub fn unpermute(x: &DataMatrix, truth: &PlantTruth) -> Result<DataMatrix> {
    let (rp, cp) = match (truth.row_perms.get(x.id), truth.col_perms.get(x.id)) {
        (Some(r), Some(c)) => (r, c),
        _ => return Err(Error::UnknownMatrix(x.id)),
    };
    if rp.len() != x.values.nrows() || cp.len() != x.values.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "matrix {} is {:?} but its permutations cover {}x{}",
            x.id,
            x.values.dim(),
            rp.len(),
            cp.len()
        )));
    }
    let mut out = Array2::zeros(x.values.dim());
    for i in 0..rp.len() {
        for j in 0..cp.len() {
            out[[rp[i], cp[j]]] = x.values[[i, j]];
        }
    }
    Ok(DataMatrix {
        values: out,
        ..x.clone()
    })
}

//! Entities, relational matrices and the bipartite entity-matrix graph.
//!
//! Indices are zero-based throughout: entity `e` is `graph.entities[e]` and
//! matrix `m` is `graph.matrices[m]`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    #[default]
    Real,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: usize,
    pub name: String,
    /// Number of instances `d_e`.
    pub count: usize,
    /// Requested cluster count `k_e`.
    pub k: usize,
}

impl Entity {
    pub fn new(id: usize, name: impl Into<String>, count: usize, k: usize) -> Self {
        Self {
            id,
            name: name.into(),
            count,
            k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub id: usize,
    /// Row entity `r_m`.
    pub rows: usize,
    /// Column entity `c_m`.
    pub cols: usize,
    pub values: Array2<f64>,
    pub datatype: DataType,
}

impl DataMatrix {
    pub fn new(id: usize, rows: usize, cols: usize, values: Array2<f64>, datatype: DataType) -> Self {
        Self {
            id,
            rows,
            cols,
            values,
            datatype,
        }
    }

    pub fn is_self_relation(&self) -> bool {
        self.rows == self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Checks that a binary matrix only holds 0 and 1.
    pub fn check_binary(&self) -> Result<()> {
        if self.datatype != DataType::Binary {
            return Ok(());
        }
        for ((row, col), &value) in self.values.indexed_iter() {
            if value != 0.0 && value != 1.0 {
                return Err(Error::BadBinary {
                    matrix: self.id,
                    row,
                    col,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// A matrix oriented so that the instances of `entity` index its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixView {
    pub entity: usize,
    pub matrix: usize,
    pub data: Array2<f64>,
}

/// The bipartite graph binding entities to the matrices that relate them.
///
/// Immutable once built. A self-relation matrix (same entity on both axes)
/// contributes a single edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityMatrixGraph {
    pub entities: Vec<Entity>,
    pub matrices: Vec<DataMatrix>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

pub fn build_graph(entities: Vec<Entity>, matrices: Vec<DataMatrix>) -> Result<EntityMatrixGraph> {
    for (i, ent) in entities.iter().enumerate() {
        if ent.id != i {
            return Err(Error::InvalidEntity(format!(
                "entity at position {i} has id {}",
                ent.id
            )));
        }
        if ent.k == 0 || ent.k > ent.count {
            return Err(Error::InvalidEntity(format!(
                "entity {i} ({}) needs 1 <= k <= d, got k = {}, d = {}",
                ent.name, ent.k, ent.count
            )));
        }
    }

    let mut neighbors = vec![Vec::new(); entities.len()];
    let mut edges = Vec::with_capacity(2 * matrices.len());
    for (m, mat) in matrices.iter().enumerate() {
        if mat.id != m {
            return Err(Error::DimensionMismatch(format!(
                "matrix at position {m} has id {}",
                mat.id
            )));
        }
        for &e in &[mat.rows, mat.cols] {
            if e >= entities.len() {
                return Err(Error::UnknownEntity(e));
            }
        }
        let (nr, nc) = mat.shape();
        let (dr, dc) = (entities[mat.rows].count, entities[mat.cols].count);
        if nr != dr || nc != dc {
            return Err(Error::DimensionMismatch(format!(
                "matrix {m} is {nr}x{nc} but entities {} and {} declare {dr}x{dc}",
                mat.rows, mat.cols
            )));
        }
        mat.check_binary()?;

        edges.push((mat.rows, m));
        neighbors[mat.rows].push(m);
        if !mat.is_self_relation() {
            edges.push((mat.cols, m));
            neighbors[mat.cols].push(m);
        }
    }

    if let Some(e) = neighbors.iter().position(Vec::is_empty) {
        return Err(Error::DanglingEntity(e));
    }
    edges.sort_unstable_by_key(|&(e, m)| (m, e));

    Ok(EntityMatrixGraph {
        entities,
        matrices,
        edges,
        neighbors,
    })
}

impl EntityMatrixGraph {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_matrices(&self) -> usize {
        self.matrices.len()
    }

    /// Edges `(e, m)` ordered by matrix, then entity.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, e: usize, m: usize) -> bool {
        m < self.matrices.len() && (self.matrices[m].rows == e || self.matrices[m].cols == e)
    }

    /// Matrices containing entity `e`, ascending. This order fixes every
    /// per-entity concatenation downstream.
    pub fn neighbors(&self, e: usize) -> &[usize] {
        &self.neighbors[e]
    }

    pub fn degree(&self, e: usize) -> usize {
        self.neighbors[e].len()
    }

    /// The entity on the other axis of matrix `m` as seen from `e`.
    pub fn partner(&self, e: usize, m: usize) -> Result<usize> {
        let mat = &self.matrices[m];
        if mat.rows == e {
            Ok(mat.cols)
        } else if mat.cols == e {
            Ok(mat.rows)
        } else {
            Err(Error::NoSuchEdge { entity: e, matrix: m })
        }
    }

    pub fn view(&self, e: usize, m: usize) -> Result<MatrixView> {
        if !self.has_edge(e, m) {
            return Err(Error::NoSuchEdge { entity: e, matrix: m });
        }
        let mat = &self.matrices[m];
        let data = if mat.rows == e {
            mat.values.clone()
        } else {
            mat.values.t().to_owned()
        };
        Ok(MatrixView {
            entity: e,
            matrix: m,
            data,
        })
    }

    pub fn ks(&self) -> Vec<usize> {
        self.entities.iter().map(|e| e.k).collect()
    }

    /// Same graph with every matrix's values replaced.
    pub fn with_values(&self, values: Vec<Array2<f64>>) -> Result<EntityMatrixGraph> {
        if values.len() != self.matrices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} value arrays for {} matrices",
                values.len(),
                self.matrices.len()
            )));
        }
        let matrices = self
            .matrices
            .iter()
            .zip(values)
            .map(|(m, v)| DataMatrix { values: v, ..m.clone() })
            .collect();
        build_graph(self.entities.clone(), matrices)
    }

    /// Same graph with new cluster counts.
    pub fn with_ks(&self, ks: &[usize]) -> Result<EntityMatrixGraph> {
        if ks.len() != self.entities.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} cluster counts for {} entities",
                ks.len(),
                self.entities.len()
            )));
        }
        let entities = self
            .entities
            .iter()
            .zip(ks)
            .map(|(e, &k)| Entity { k, ..e.clone() })
            .collect();
        build_graph(entities, self.matrices.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fig1() -> EntityMatrixGraph {
        let entities = vec![
            Entity::new(0, "E1", 3, 2),
            Entity::new(1, "E2", 4, 2),
            Entity::new(2, "E3", 2, 1),
            Entity::new(3, "E4", 5, 2),
        ];
        let matrices = vec![
            DataMatrix::new(0, 0, 1, Array2::ones((3, 4)), DataType::Real),
            DataMatrix::new(1, 0, 2, Array2::zeros((3, 2)), DataType::Binary),
            DataMatrix::new(2, 3, 1, Array2::from_elem((5, 4), 2.0), DataType::Real),
        ];
        build_graph(entities, matrices).unwrap()
    }

    #[test]
    fn fig1_graph_has_six_edges() {
        let g = fig1();
        assert_eq!(g.edges().len(), 6);
        assert_eq!(g.neighbors(0), &[0, 1]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[1]);
        assert_eq!(g.neighbors(3), &[2]);
    }

    #[test]
    fn self_relation_contributes_one_edge() {
        let x = array![[0.0, 1.0], [1.0, 0.0]];
        let g = build_graph(
            vec![Entity::new(0, "gene", 2, 1)],
            vec![DataMatrix::new(0, 0, 0, x.clone(), DataType::Binary)],
        )
        .unwrap();
        assert_eq!(g.edges(), &[(0, 0)]);
        assert_eq!(g.neighbors(0), &[0]);
        assert_eq!(g.view(0, 0).unwrap().data, x);
    }

    #[test]
    fn rejects_wrong_row_count() {
        let err = build_graph(
            vec![Entity::new(0, "a", 5, 1), Entity::new(1, "b", 3, 1)],
            vec![DataMatrix::new(0, 0, 1, Array2::zeros((4, 3)), DataType::Real)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_dangling_entity() {
        let err = build_graph(
            vec![
                Entity::new(0, "a", 2, 1),
                Entity::new(1, "b", 2, 1),
                Entity::new(2, "c", 2, 1),
            ],
            vec![DataMatrix::new(0, 0, 1, Array2::zeros((2, 2)), DataType::Real)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DanglingEntity(2)));
    }

    #[test]
    fn rejects_non_binary_values() {
        let err = build_graph(
            vec![Entity::new(0, "a", 2, 1), Entity::new(1, "b", 2, 1)],
            vec![DataMatrix::new(0, 0, 1, array![[0.0, 0.5], [1.0, 0.0]], DataType::Binary)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::BadBinary { row: 0, col: 1, .. }));
    }

    #[test]
    fn views_orient_rows_to_entity() {
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let g = build_graph(
            vec![Entity::new(0, "a", 2, 1), Entity::new(1, "b", 3, 1)],
            vec![DataMatrix::new(0, 0, 1, x.clone(), DataType::Real)],
        )
        .unwrap();
        assert_eq!(g.view(0, 0).unwrap().data, x);
        assert_eq!(g.view(1, 0).unwrap().data, x.t());
        assert_eq!(g.view(0, 0).unwrap().data.t(), g.view(1, 0).unwrap().data);
    }

    #[test]
    fn view_outside_matrix_is_no_such_edge() {
        let g = fig1();
        assert!(matches!(
            g.view(2, 0),
            Err(Error::NoSuchEdge { entity: 2, matrix: 0 })
        ));
    }

    #[test]
    fn degree_sum_accounts_for_self_relations() {
        let entities = vec![Entity::new(0, "a", 3, 1), Entity::new(1, "b", 2, 1)];
        let matrices = vec![
            DataMatrix::new(0, 0, 0, Array2::zeros((3, 3)), DataType::Real),
            DataMatrix::new(1, 0, 1, Array2::zeros((3, 2)), DataType::Real),
            DataMatrix::new(2, 1, 1, Array2::zeros((2, 2)), DataType::Real),
        ];
        let g = build_graph(entities.clone(), matrices.clone()).unwrap();
        assert_eq!(g.edges().len(), 2 * 3 - 2);
        assert_eq!(g, build_graph(entities, matrices).unwrap());
    }
}

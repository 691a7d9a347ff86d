//! Factor coding and design matrix assembly.
//!
//! Factors are coded so that every effect sums to zero over a balanced
//! layout: nominal factors get sum coding (last level is the implicit
//! reference carrying -1 in every column), ordinal factors a single
//! centered linear contrast, interactions elementwise products of the
//! parent codings, and nested factors sum coding within each outer level.
//! The term's degrees of freedom always equal its column count.

use crate::error::AscaError;
use crate::Result;
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Nominal,
    Ordinal,
}

/// A factor: one observed level per row of the data table.
#[derive(Debug, Clone)]
pub struct FactorSpec {
    pub name: String,
    /// Level of each observation, in 0..n_levels.
    pub levels: Vec<usize>,
    /// Declared level count; kept fixed even when row exclusion leaves
    /// some levels unobserved.
    pub n_levels: usize,
    pub kind: FactorKind,
    /// Name of the factor this one is nested in, if any.
    pub nested_in: Option<String>,
}

impl FactorSpec {
    pub fn new(name: &str, levels: Vec<usize>, n_levels: usize, kind: FactorKind) -> Self {
        FactorSpec {
            name: name.to_string(),
            levels,
            n_levels,
            kind,
            nested_in: None,
        }
    }

    pub fn nested(mut self, outer: &str) -> Self {
        self.nested_in = Some(outer.to_string());
        self
    }

    fn validate(&self) -> Result<()> {
        if let Some(&bad) = self.levels.iter().find(|&&l| l >= self.n_levels) {
            return Err(AscaError::LevelOutOfRange {
                factor: self.name.clone(),
                level: bad,
                n_levels: self.n_levels,
            });
        }
        let mut seen = vec![false; self.n_levels];
        for &l in &self.levels {
            seen[l] = true;
        }
        if self.n_levels < 2 || seen.iter().filter(|&&s| s).count() < 2 {
            return Err(AscaError::DegenerateFactor(self.name.clone()));
        }
        Ok(())
    }
}

/// Sum coding: `n_levels - 1` columns; level l < n_levels-1 puts a 1 in
/// column l, the last level puts -1 everywhere.
pub fn sum_code_nominal(factor: &FactorSpec) -> Result<DMatrix<f64>> {
    factor.validate()?;
    let cols = factor.n_levels - 1;
    let mut m = DMatrix::zeros(factor.levels.len(), cols);
    for (i, &l) in factor.levels.iter().enumerate() {
        if l == factor.n_levels - 1 {
            for c in 0..cols {
                m[(i, c)] = -1.0;
            }
        } else {
            m[(i, l)] = 1.0;
        }
    }
    Ok(m)
}

/// Ordinal coding: one centered linear contrast, level l maps to
/// l - (n_levels - 1)/2.
pub fn code_ordinal(factor: &FactorSpec) -> Result<DMatrix<f64>> {
    factor.validate()?;
    let center = (factor.n_levels as f64 - 1.0) / 2.0;
    Ok(DMatrix::from_iterator(
        factor.levels.len(),
        1,
        factor.levels.iter().map(|&l| l as f64 - center),
    ))
}

/// Interaction block: elementwise products of all column pairs, columns
/// of `a` varying slowest. Output has `a.ncols() * b.ncols()` columns.
pub fn interaction_block(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(AscaError::ShapeMismatch(format!(
            "interaction blocks disagree on row count: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let n = a.nrows();
    let mut m = DMatrix::zeros(n, a.ncols() * b.ncols());
    for ca in 0..a.ncols() {
        for cb in 0..b.ncols() {
            let out = ca * b.ncols() + cb;
            for r in 0..n {
                m[(r, out)] = a[(r, ca)] * b[(r, cb)];
            }
        }
    }
    Ok(m)
}

/// Sum coding of `inner` within each level of `outer`. Every inner level
/// must occur under exactly one outer level. The block has
/// sum(levels within outer level - 1) columns.
pub fn nested_coding(outer: &FactorSpec, inner: &FactorSpec) -> Result<DMatrix<f64>> {
    outer.validate()?;
    inner.validate()?;
    if outer.levels.len() != inner.levels.len() {
        return Err(AscaError::ShapeMismatch(format!(
            "nested factors disagree on observation count: {} vs {}",
            outer.levels.len(),
            inner.levels.len()
        )));
    }

    // Which inner levels occur under each outer level.
    let mut owner: Vec<Option<usize>> = vec![None; inner.n_levels];
    for (&o, &i) in outer.levels.iter().zip(&inner.levels) {
        match owner[i] {
            None => owner[i] = Some(o),
            Some(prev) if prev == o => {}
            Some(_) => {
                return Err(AscaError::NotProperlyNested {
                    outer: outer.name.clone(),
                    inner: inner.name.clone(),
                    level: i,
                });
            }
        }
    }

    // Local sum coding per outer level, inner levels in ascending order.
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); outer.n_levels];
    for (i, o) in owner.iter().enumerate() {
        if let Some(o) = o {
            groups[*o].push(i);
        }
    }
    let total_cols: usize = groups.iter().map(|g| g.len().saturating_sub(1)).sum();
    let mut m = DMatrix::zeros(outer.levels.len(), total_cols);
    let mut offset = 0usize;
    for group in &groups {
        if group.len() < 2 {
            continue;
        }
        let cols = group.len() - 1;
        for (r, &i) in inner.levels.iter().enumerate() {
            let Some(local) = group.iter().position(|&g| g == i) else {
                continue;
            };
            if local == group.len() - 1 {
                for c in 0..cols {
                    m[(r, offset + c)] = -1.0;
                }
            } else {
                m[(r, offset + local)] = 1.0;
            }
        }
        offset += cols;
    }
    Ok(m)
}

/// One term of the assembled design: a named contiguous column block.
#[derive(Debug, Clone)]
pub struct TermBlock {
    pub name: String,
    pub start: usize,
    /// Column count, which is also the term's degrees of freedom.
    pub len: usize,
}

impl TermBlock {
    pub fn df(&self) -> usize {
        self.len
    }
}

/// Assembled design matrix: intercept, one block per factor in
/// declaration order, one block per interaction.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    /// Term blocks; terms[0] is always the intercept.
    pub terms: Vec<TermBlock>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn p(&self) -> usize {
        self.matrix.ncols()
    }

    /// Effect terms, i.e. everything but the intercept.
    pub fn effect_terms(&self) -> &[TermBlock] {
        &self.terms[1..]
    }

    pub fn term(&self, name: &str) -> Result<&TermBlock> {
        self.terms
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| AscaError::UnknownTerm(name.to_string()))
    }

    /// Columns of one term.
    pub fn block(&self, term: &TermBlock) -> nalgebra::DMatrixView<'_, f64> {
        self.matrix.view((0, term.start), (self.n(), term.len))
    }
}

/// Code each factor, append the requested pairwise interactions, and glue
/// everything behind an intercept column. Interaction members must exist
/// and must not be in a nesting relationship with each other.
pub fn assemble_design(
    factors: &[FactorSpec],
    interactions: &[(String, String)],
) -> Result<DesignMatrix> {
    if factors.is_empty() {
        return Err(AscaError::ShapeMismatch(
            "at least one factor is required".to_string(),
        ));
    }
    let n = factors[0].levels.len();
    for f in factors {
        if f.levels.len() != n {
            return Err(AscaError::ShapeMismatch(format!(
                "factor '{}' has {} observations, expected {}",
                f.name,
                f.levels.len(),
                n
            )));
        }
    }
    for (i, f) in factors.iter().enumerate() {
        if factors[..i].iter().any(|g| g.name == f.name) {
            return Err(AscaError::DuplicateFactorName(f.name.clone()));
        }
    }

    let find = |name: &str| -> Result<&FactorSpec> {
        factors
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| AscaError::UnknownTerm(name.to_string()))
    };

    let mut blocks: Vec<(String, DMatrix<f64>)> = Vec::new();
    for f in factors {
        let coded = match (&f.nested_in, f.kind) {
            (Some(outer_name), _) => {
                let outer = find(outer_name)?;
                nested_coding(outer, f)?
            }
            (None, FactorKind::Nominal) => sum_code_nominal(f)?,
            (None, FactorKind::Ordinal) => code_ordinal(f)?,
        };
        let name = match &f.nested_in {
            Some(outer) => format!("{}({})", f.name, outer),
            None => f.name.clone(),
        };
        blocks.push((name, coded));
    }

    for (a_name, b_name) in interactions {
        let a = find(a_name)?;
        let b = find(b_name)?;
        let nested_pair = a.nested_in.as_deref() == Some(b_name.as_str())
            || b.nested_in.as_deref() == Some(a_name.as_str());
        if nested_pair {
            return Err(AscaError::InteractionWithNestedPair(
                a_name.clone(),
                b_name.clone(),
            ));
        }
        let pos_a = factors.iter().position(|f| f.name == *a_name).expect("found above");
        let pos_b = factors.iter().position(|f| f.name == *b_name).expect("found above");
        let coded = interaction_block(&blocks[pos_a].1, &blocks[pos_b].1)?;
        blocks.push((format!("{a_name}\u{d7}{b_name}"), coded));
    }

    let p = 1 + blocks.iter().map(|(_, b)| b.ncols()).sum::<usize>();
    let mut matrix = DMatrix::zeros(n, p);
    matrix.column_mut(0).fill(1.0);
    let mut terms = vec![TermBlock {
        name: "intercept".to_string(),
        start: 0,
        len: 1,
    }];
    let mut offset = 1usize;
    for (name, block) in blocks {
        matrix.view_mut((0, offset), (n, block.ncols())).copy_from(&block);
        terms.push(TermBlock {
            name,
            start: offset,
            len: block.ncols(),
        });
        offset += block.ncols();
    }
    Ok(DesignMatrix { matrix, terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal(name: &str, levels: &[usize], n_levels: usize) -> FactorSpec {
        FactorSpec::new(name, levels.to_vec(), n_levels, FactorKind::Nominal)
    }

    #[test]
    fn sum_coding_three_levels() {
        let f = nominal("f", &[0, 1, 2, 2], 3);
        let m = sum_code_nominal(&f).unwrap();
        assert_eq!(m.nrows(), 4);
        assert_eq!(m.ncols(), 2);
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_eq!(m.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert_eq!(m.row(2).iter().copied().collect::<Vec<_>>(), vec![-1.0, -1.0]);
        assert_eq!(m.row(3).iter().copied().collect::<Vec<_>>(), vec![-1.0, -1.0]);
    }

    #[test]
    fn sum_coding_two_levels_is_a_sign_column() {
        let f = nominal("f", &[0, 1, 0, 1], 2);
        let m = sum_code_nominal(&f).unwrap();
        assert_eq!(m.as_slice(), &[1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn ordinal_coding_is_centered_linear() {
        let f = FactorSpec::new("y", vec![0, 1, 2, 3, 4], 5, FactorKind::Ordinal);
        let m = code_ordinal(&f).unwrap();
        assert_eq!(m.as_slice(), &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        // Centered: columns sum to zero over the full level range.
        assert_eq!(m.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn single_level_factor_is_degenerate() {
        let f = nominal("f", &[0, 0, 0], 1);
        assert!(matches!(
            sum_code_nominal(&f).unwrap_err(),
            AscaError::DegenerateFactor(_)
        ));
        // Declared two levels but only one observed: still degenerate.
        let g = nominal("g", &[1, 1, 1], 2);
        assert!(matches!(
            sum_code_nominal(&g).unwrap_err(),
            AscaError::DegenerateFactor(_)
        ));
    }

    #[test]
    fn out_of_range_level_is_rejected() {
        let f = nominal("f", &[0, 7], 7);
        assert!(matches!(
            sum_code_nominal(&f).unwrap_err(),
            AscaError::LevelOutOfRange { level: 7, .. }
        ));
    }

    #[test]
    fn interaction_columns_are_products() {
        let a = nominal("a", &[0, 0, 1, 1, 0, 1], 2);
        let b = nominal("b", &[0, 1, 2, 0, 2, 1], 3);
        let ca = sum_code_nominal(&a).unwrap();
        let cb = sum_code_nominal(&b).unwrap();
        let ab = interaction_block(&ca, &cb).unwrap();
        assert_eq!(ab.ncols(), 2);
        for r in 0..6 {
            assert_eq!(ab[(r, 0)], ca[(r, 0)] * cb[(r, 0)]);
            assert_eq!(ab[(r, 1)], ca[(r, 0)] * cb[(r, 1)]);
        }
    }

    #[test]
    fn interaction_row_mismatch_is_rejected() {
        let a = DMatrix::zeros(3, 1);
        let b = DMatrix::zeros(4, 1);
        assert!(matches!(
            interaction_block(&a, &b).unwrap_err(),
            AscaError::ShapeMismatch(_)
        ));
    }

    #[test]
    fn nested_coding_dfs_add_up_within_outer_levels() {
        // Sites 0,1 inside region 0; sites 2,3,4 inside region 1:
        // (2-1) + (3-1) = 3 columns.
        let outer = nominal("region", &[0, 0, 0, 0, 1, 1, 1, 1, 1, 1], 2);
        let inner = nominal("site", &[0, 0, 1, 1, 2, 2, 3, 3, 4, 4], 5);
        let m = nested_coding(&outer, &inner).unwrap();
        assert_eq!(m.ncols(), 3);
        // Within region 0 the block for site sums to zero per column.
        for c in 0..m.ncols() {
            let total: f64 = (0..m.nrows()).map(|r| m[(r, c)]).sum();
            assert_eq!(total, 0.0);
        }
        // Row 2 (site 1, last in region 0) carries -1 in region 0's column.
        assert_eq!(m[(2, 0)], -1.0);
        assert_eq!(m[(2, 1)], 0.0);
    }

    #[test]
    fn improper_nesting_is_rejected() {
        // Site 1 appears under both regions.
        let outer = nominal("region", &[0, 0, 1, 1], 2);
        let inner = nominal("site", &[0, 1, 1, 2], 3);
        assert!(matches!(
            nested_coding(&outer, &inner).unwrap_err(),
            AscaError::NotProperlyNested { level: 1, .. }
        ));
    }

    #[test]
    fn assemble_builds_intercept_and_blocks_in_order() {
        let a = nominal("a", &[0, 0, 1, 1, 2, 2], 3);
        let b = nominal("b", &[0, 1, 0, 1, 0, 1], 2);
        let d = assemble_design(&[a, b], &[("a".into(), "b".into())]).unwrap();
        assert_eq!(d.n(), 6);
        // 1 + 2 + 1 + 2.
        assert_eq!(d.p(), 6);
        let names: Vec<&str> = d.terms.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, vec!["intercept", "a", "b", "a\u{d7}b"]);
        assert!(d.matrix.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(d.term("a").unwrap().df(), 2);
        assert_eq!(d.term("a\u{d7}b").unwrap().df(), 2);
    }

    #[test]
    fn lakes_and_pollen_shaped_designs_have_documented_dfs() {
        // 7 sensors x 12 years, year ordinal, crossed with interaction.
        let mut sensor_levels = Vec::new();
        let mut year_levels = Vec::new();
        for s in 0..7 {
            for y in 0..12 {
                sensor_levels.push(s);
                year_levels.push(y);
            }
        }
        let sensor = nominal("sensor", &sensor_levels, 7);
        let year = FactorSpec::new("year", year_levels, 12, FactorKind::Ordinal);
        let d = assemble_design(&[year, sensor], &[("year".into(), "sensor".into())]).unwrap();
        assert_eq!(d.term("year").unwrap().df(), 1);
        assert_eq!(d.term("sensor").unwrap().df(), 6);
        assert_eq!(d.term("year\u{d7}sensor").unwrap().df(), 6);
        assert_eq!(d.p(), 14);

        // 30 years x 26 fortnights, year ordinal.
        let mut year_levels = Vec::new();
        let mut fort_levels = Vec::new();
        for y in 0..30 {
            for f in 0..26 {
                year_levels.push(y);
                fort_levels.push(f);
            }
        }
        let year = FactorSpec::new("year", year_levels, 30, FactorKind::Ordinal);
        let fort = nominal("fortnight", &fort_levels, 26);
        let d = assemble_design(&[year, fort], &[("year".into(), "fortnight".into())]).unwrap();
        assert_eq!(d.term("year").unwrap().df(), 1);
        assert_eq!(d.term("fortnight").unwrap().df(), 25);
        assert_eq!(d.term("year\u{d7}fortnight").unwrap().df(), 25);
        assert_eq!(d.p(), 52);
    }

    #[test]
    fn balanced_blocks_are_mutually_orthogonal() {
        // Fully crossed balanced 3x4 with 2 replicates.
        let mut a_levels = Vec::new();
        let mut b_levels = Vec::new();
        for a in 0..3 {
            for b in 0..4 {
                for _ in 0..2 {
                    a_levels.push(a);
                    b_levels.push(b);
                }
            }
        }
        let a = nominal("a", &a_levels, 3);
        let b = nominal("b", &b_levels, 4);
        let d = assemble_design(&[a, b], &[("a".into(), "b".into())]).unwrap();
        let g = d.matrix.transpose() * &d.matrix;
        for (i, ti) in d.terms.iter().enumerate() {
            for tj in d.terms.iter().skip(i + 1) {
                for ci in ti.start..ti.start + ti.len {
                    for cj in tj.start..tj.start + tj.len {
                        assert_eq!(g[(ci, cj)], 0.0, "columns {ci} and {cj} not orthogonal");
                    }
                }
            }
        }
    }

    #[test]
    fn assemble_rejects_duplicates_unknowns_and_nested_interactions() {
        let a = nominal("a", &[0, 1, 0, 1], 2);
        let a2 = nominal("a", &[0, 1, 0, 1], 2);
        assert!(matches!(
            assemble_design(&[a.clone(), a2], &[]).unwrap_err(),
            AscaError::DuplicateFactorName(_)
        ));
        assert!(matches!(
            assemble_design(&[a.clone()], &[("a".into(), "zz".into())]).unwrap_err(),
            AscaError::UnknownTerm(_)
        ));
        let outer = nominal("region", &[0, 0, 1, 1], 2);
        let site = nominal("site", &[0, 1, 2, 3], 4).nested("region");
        assert!(matches!(
            assemble_design(&[outer, site], &[("region".into(), "site".into())]).unwrap_err(),
            AscaError::InteractionWithNestedPair(_, _)
        ));
    }

    #[test]
    fn factor_length_mismatch_is_rejected() {
        let a = nominal("a", &[0, 1, 0, 1], 2);
        let b = nominal("b", &[0, 1, 0], 2);
        assert!(matches!(
            assemble_design(&[a, b], &[]).unwrap_err(),
            AscaError::ShapeMismatch(_)
        ));
    }
}

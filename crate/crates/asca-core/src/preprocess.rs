//! Row exclusion, imputation, and column scaling on unfolded tables.
//!
//! Order matters and the pipeline applies these in sequence: drop rows
//! with too many holes, fill the remaining holes with column means,
//! then center or autoscale. Centering and scaling are mask-aware, so
//! they can also run directly on tables that still contain holes.

use crate::error::AscaError;
use crate::tensor::DesignTable;
use crate::Result;

/// What `drop_rows_by_missing` removed.
#[derive(Debug, Clone)]
pub struct ExclusionReport {
    pub threshold: usize,
    /// (original row index, row label, missing count) per dropped row.
    pub dropped: Vec<(usize, String, usize)>,
    pub kept: usize,
}

/// Remove rows whose missing-cell count exceeds `threshold`. A
/// threshold of zero keeps only complete rows.
pub fn drop_rows_by_missing(
    table: &DesignTable,
    threshold: usize,
) -> Result<(DesignTable, ExclusionReport)> {
    let keep: Vec<usize> = (0..table.nrows())
        .filter(|&r| table.missing_in_row(r) <= threshold)
        .collect();
    if keep.is_empty() {
        return Err(AscaError::AllRowsDropped);
    }
    let dropped = (0..table.nrows())
        .filter(|&r| table.missing_in_row(r) > threshold)
        .map(|r| (r, table.row_label(r), table.missing_in_row(r)))
        .collect();

    let matrix = table.matrix.select_rows(keep.iter());
    let missing = table.missing.select_rows(keep.iter());
    let row_levels = keep.iter().map(|&r| table.row_levels[r].clone()).collect();
    let out = DesignTable {
        matrix,
        missing,
        row_modes: table.row_modes.clone(),
        col_modes: table.col_modes.clone(),
        row_levels,
        col_levels: table.col_levels.clone(),
    };
    let report = ExclusionReport {
        threshold,
        dropped,
        kept: keep.len(),
    };
    Ok((out, report))
}

/// Replace every missing cell with its column's observed mean and clear
/// the mask. Fails on a column with no observed values at all.
pub fn impute_column_mean(table: &mut DesignTable) -> Result<usize> {
    let n = table.nrows();
    let mut filled = 0usize;
    for c in 0..table.ncols() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in 0..n {
            if !table.missing[(r, c)] {
                sum += table.matrix[(r, c)];
                count += 1;
            }
        }
        if count == 0 {
            return Err(AscaError::EmptyColumn(c));
        }
        let mean = sum / count as f64;
        for r in 0..n {
            if table.missing[(r, c)] {
                table.matrix[(r, c)] = mean;
                table.missing[(r, c)] = false;
                filled += 1;
            }
        }
    }
    Ok(filled)
}

/// Subtract each column's observed mean from its observed cells.
/// Missing cells are left untouched. Fails on an all-missing column.
pub fn mean_center(table: &mut DesignTable) -> Result<()> {
    let n = table.nrows();
    for c in 0..table.ncols() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in 0..n {
            if !table.missing[(r, c)] {
                sum += table.matrix[(r, c)];
                count += 1;
            }
        }
        if count == 0 {
            return Err(AscaError::EmptyColumn(c));
        }
        let mean = sum / count as f64;
        for r in 0..n {
            if !table.missing[(r, c)] {
                table.matrix[(r, c)] -= mean;
            }
        }
    }
    Ok(())
}

/// Center each column and divide by its observed standard deviation
/// (n-1 denominator). Columns with zero variance are centered only and
/// their indices returned so callers can warn; dividing them would turn
/// real zeros into NaN.
pub fn autoscale(table: &mut DesignTable) -> Result<Vec<usize>> {
    mean_center(table)?;
    let n = table.nrows();
    let mut flat = Vec::new();
    for c in 0..table.ncols() {
        let mut ss = 0.0;
        let mut count = 0usize;
        for r in 0..n {
            if !table.missing[(r, c)] {
                let v = table.matrix[(r, c)];
                ss += v * v;
                count += 1;
            }
        }
        if count < 2 || ss == 0.0 {
            flat.push(c);
            continue;
        }
        let sd = (ss / (count - 1) as f64).sqrt();
        if sd == 0.0 {
            flat.push(c);
            continue;
        }
        for r in 0..n {
            if !table.missing[(r, c)] {
                table.matrix[(r, c)] /= sd;
            }
        }
    }
    Ok(flat)
}

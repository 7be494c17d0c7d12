//! Weight-stationary mapping of conv/fc layers onto a PIM memory array.
//!
//! Each filter (`r*s*c` weights) is unrolled into one logical column, so a
//! layer is an `r*s*c x m` matrix. When the matrix exceeds the array it is
//! split by ceil-division into `T_r x T_c` tiles that are processed in
//! sequence; edge tiles hold the remainder rows/columns. When the whole matrix
//! fits and replication is on, `rho` block-diagonal copies sit on disjoint
//! row and column ranges and each copy computes a different output position in
//! the same pass.
//!
//! One pass is one activation of the array and serves as the latency proxy.
//! Utilization is occupied cells over `rows*cols`, pass-weighted. Input reads
//! count every value streamed into the array, with no buffering across passes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net_ir::{infer_shapes, LayerShape, LayerSpec, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArraySpec {
    pub rows: usize,
    pub cols: usize,
}

impl ArraySpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyArray { rows, cols });
        }
        Ok(ArraySpec { rows, cols })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn cells(&self) -> u64 {
        self.rows as u64 * self.cols as u64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MappingOptions {
    /// Place block-diagonal copies of layers that fit in a single tile.
    pub replication: bool,
}

/// Placement of one weighted layer on the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerMapping {
    /// Unrolled filter length `r*s*c`.
    pub filter_rows: usize,
    /// Number of filters `m`.
    pub filters: usize,
    pub row_tiles: usize,
    pub col_tiles: usize,
    pub replication: usize,
    /// Cells occupied in a pass over a full (non-edge) tile, or by all
    /// `replication` copies.
    pub used_cells_per_pass: u64,
    pub array: ArraySpec,
}

/// One sub-block of the filter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub row_tile: usize,
    pub col_tile: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayerMapping {
    /// Tiles in row-major order; edge tiles take the remainder.
    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        let array = self.array;
        (0..self.row_tiles).flat_map(move |i| {
            (0..self.col_tiles).map(move |j| Tile {
                row_tile: i,
                col_tile: j,
                rows: array.rows.min(self.filter_rows - i * array.rows),
                cols: array.cols.min(self.filters - j * array.cols),
            })
        })
    }
}

/// Places a weighted layer on `array`. `shape` must be the layer's inferred shape.
pub fn map_layer(
    layer: &LayerSpec,
    shape: &LayerShape,
    array: ArraySpec,
    opts: MappingOptions,
) -> Result<LayerMapping> {
    if array.rows == 0 || array.cols == 0 {
        return Err(Error::EmptyArray {
            rows: array.rows,
            cols: array.cols,
        });
    }
    if !layer.has_weights() {
        return Err(Error::NotWeighted(layer.id.clone()));
    }
    let (r, s, m) = match (layer.r, layer.s, layer.m) {
        (Some(r), Some(s), Some(m)) => (r, s, m),
        _ => return Err(Error::NotWeighted(layer.id.clone())),
    };
    let filter_rows = r * s * shape.input.c;
    let row_tiles = filter_rows.div_ceil(array.rows);
    let col_tiles = m.div_ceil(array.cols);
    let replication = if opts.replication && row_tiles == 1 && col_tiles == 1 {
        (array.rows / filter_rows).min(array.cols / m).max(1)
    } else {
        1
    };
    let used_cells_per_pass = if row_tiles == 1 && col_tiles == 1 {
        (replication * filter_rows * m) as u64
    } else {
        (filter_rows.min(array.rows) * m.min(array.cols)) as u64
    };
    Ok(LayerMapping {
        filter_rows,
        filters: m,
        row_tiles,
        col_tiles,
        replication,
        used_cells_per_pass,
        array,
    })
}

/// Cost metrics for one mapped layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub id: String,
    pub mapping: LayerMapping,
    pub passes: u64,
    /// Occupied cells summed over all passes.
    pub used_cells: u64,
    pub utilization: f64,
    pub input_reads: u64,
    pub output_writes: u64,
    pub psum_updates: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MappingTotals {
    pub passes: u64,
    pub used_cells: u64,
    /// Pass-weighted mean: total used cells over `passes * rows * cols`.
    pub utilization: f64,
    pub input_reads: u64,
    pub output_writes: u64,
    pub psum_updates: u64,
}

/// Per-layer costs for every weighted layer, in network order, plus totals.
/// Unweighted layers hold no weights and do not appear.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingReport {
    pub network: String,
    pub array: ArraySpec,
    pub options: MappingOptions,
    pub layers: Vec<LayerCost>,
    pub total: MappingTotals,
}

fn overflow(id: &str) -> Error {
    Error::Overflow {
        layer: id.to_string(),
    }
}

pub fn layer_cost(
    layer: &LayerSpec,
    shape: &LayerShape,
    mapping: LayerMapping,
) -> Result<LayerCost> {
    let id = layer.id.as_str();
    let positions = (shape.e() as u64)
        .checked_mul(shape.f() as u64)
        .ok_or_else(|| overflow(id))?;
    let rho = mapping.replication as u64;
    let tiles = (mapping.row_tiles * mapping.col_tiles) as u64;
    let passes = positions
        .div_ceil(rho)
        .checked_mul(tiles)
        .ok_or_else(|| overflow(id))?;

    // Every position visits every tile once; with replication the last pass
    // carries only the leftover copies. Either way the occupied cells total
    // one cell per MAC.
    let weights = (mapping.filter_rows as u64)
        .checked_mul(mapping.filters as u64)
        .ok_or_else(|| overflow(id))?;
    let used_cells = positions.checked_mul(weights).ok_or_else(|| overflow(id))?;
    let capacity = passes as f64 * mapping.array.cells() as f64;
    let utilization = used_cells as f64 / capacity;

    let mul = |a: u64, b: u64| a.checked_mul(b).ok_or_else(|| overflow(id));
    let input_reads = mul(
        mul(positions, mapping.col_tiles as u64)?,
        mapping.filter_rows as u64,
    )?;
    let output_writes = mul(positions, mapping.filters as u64)?;
    let psum_updates = mul(output_writes, mapping.row_tiles as u64)?;

    Ok(LayerCost {
        id: layer.id.clone(),
        mapping,
        passes,
        used_cells,
        utilization,
        input_reads,
        output_writes,
        psum_updates,
    })
}

pub fn report(net: &NetworkSpec, array: ArraySpec, opts: MappingOptions) -> Result<MappingReport> {
    ArraySpec::new(array.rows, array.cols)?;
    let shapes = infer_shapes(net)?;
    let mut layers = Vec::new();
    let mut total = MappingTotals::default();
    let mut capacity = 0f64;
    for (layer, shape) in net.layers.iter().zip(&shapes.layers) {
        if !layer.has_weights() {
            continue;
        }
        let mapping = map_layer(layer, shape, array, opts)?;
        let cost = layer_cost(layer, shape, mapping)?;
        let add = |a: u64, b: u64| a.checked_add(b).ok_or_else(|| overflow(&layer.id));
        total.passes = add(total.passes, cost.passes)?;
        total.used_cells = add(total.used_cells, cost.used_cells)?;
        total.input_reads = add(total.input_reads, cost.input_reads)?;
        total.output_writes = add(total.output_writes, cost.output_writes)?;
        total.psum_updates = add(total.psum_updates, cost.psum_updates)?;
        capacity += cost.passes as f64 * array.cells() as f64;
        layers.push(cost);
    }
    if capacity > 0.0 {
        total.utilization = total.used_cells as f64 / capacity;
    }
    Ok(MappingReport {
        network: net.name.clone(),
        array,
        options: opts,
        layers,
        total,
    })
}

/// One report per array size, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<MappingReport>,
}

pub fn sweep_arrays(
    net: &NetworkSpec,
    sizes: &[ArraySpec],
    opts: MappingOptions,
) -> Result<SweepTable> {
    if sizes.is_empty() {
        return Err(Error::Config("array size list is empty".into()));
    }
    // Validate once up front so every size reports the same error.
    infer_shapes(net)?;
    let rows = sizes
        .par_iter()
        .map(|&a| report(net, a, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_ir::{Dims, LayerKind};

    fn shape(h: usize, c: usize, e: usize) -> LayerShape {
        LayerShape {
            input: Dims::new(h, h, c),
            output: Dims::new(e, e, 0),
        }
    }

    #[test]
    fn single_tile_without_replication() {
        let layer = LayerSpec::conv("c", 3, 3, 128, 1, 1, &[]);
        let map = map_layer(
            &layer,
            &shape(14, 64, 14),
            ArraySpec::new(1024, 256).unwrap(),
            MappingOptions::default(),
        )
        .unwrap();
        assert_eq!((map.row_tiles, map.col_tiles, map.replication), (1, 1, 1));
        assert_eq!(map.filter_rows, 576);
    }

    #[test]
    fn row_tiling() {
        // r*s*c = 5*5*96 = 2400
        let layer = LayerSpec::conv("c", 5, 5, 256, 1, 2, &[]);
        let map = map_layer(
            &layer,
            &shape(27, 96, 27),
            ArraySpec::square(1024).unwrap(),
            MappingOptions::default(),
        )
        .unwrap();
        assert_eq!(map.filter_rows, 2400);
        assert_eq!((map.row_tiles, map.col_tiles), (3, 1));
        let tiles: Vec<_> = map.tiles().map(|t| (t.rows, t.cols)).collect();
        assert_eq!(tiles, vec![(1024, 256), (1024, 256), (352, 256)]);
    }

    #[test]
    fn exact_fit_unit_layer() {
        let layer = LayerSpec::conv("c", 1, 1, 1, 1, 0, &[]);
        let map = map_layer(
            &layer,
            &shape(1, 1, 1),
            ArraySpec::new(1, 1).unwrap(),
            MappingOptions { replication: true },
        )
        .unwrap();
        assert_eq!((map.row_tiles, map.col_tiles, map.replication), (1, 1, 1));
    }

    #[test]
    fn replication_factor() {
        let layer = LayerSpec::conv("c", 3, 3, 64, 1, 1, &[]);
        let opts = MappingOptions { replication: true };
        let map = map_layer(
            &layer,
            &shape(14, 64, 14),
            ArraySpec::square(4096).unwrap(),
            opts,
        )
        .unwrap();
        // min(4096/576, 4096/64) = min(7, 64)
        assert_eq!(map.replication, 7);
        assert_eq!(map.used_cells_per_pass, 7 * 576 * 64);
        let cost = layer_cost(&layer, &shape(14, 64, 14), map).unwrap();
        assert_eq!(cost.passes, 28); // ceil(196 / 7)
        assert_eq!(cost.input_reads, 196 * 576);
    }

    #[test]
    fn replication_ignored_when_tiled() {
        let layer = LayerSpec::conv("c", 3, 3, 64, 1, 1, &[]);
        let opts = MappingOptions { replication: true };
        let map = map_layer(
            &layer,
            &shape(14, 64, 14),
            ArraySpec::new(512, 4096).unwrap(),
            opts,
        )
        .unwrap();
        assert_eq!((map.row_tiles, map.replication), (2, 1));
    }

    #[test]
    fn zero_array_rejected() {
        assert!(matches!(
            ArraySpec::new(0, 4),
            Err(Error::EmptyArray { .. })
        ));
        let layer = LayerSpec::conv("c", 1, 1, 1, 1, 0, &[]);
        let bad = ArraySpec { rows: 4, cols: 0 };
        assert!(map_layer(&layer, &shape(1, 1, 1), bad, MappingOptions::default()).is_err());
    }

    #[test]
    fn unweighted_layer_rejected() {
        let layer = LayerSpec::pool("p", LayerKind::MaxPool, 2, 2, 2, 0, &[]);
        let res = map_layer(
            &layer,
            &shape(4, 1, 2),
            ArraySpec::square(8).unwrap(),
            MappingOptions::default(),
        );
        assert!(matches!(res, Err(Error::NotWeighted(_))));
    }

    fn example_net() -> NetworkSpec {
        NetworkSpec::new(
            "ex",
            Dims::new(14, 14, 64),
            vec![LayerSpec::conv("c", 3, 3, 128, 1, 1, &[])],
        )
    }

    #[test]
    fn report_example() {
        let rep = report(
            &example_net(),
            ArraySpec::new(1024, 256).unwrap(),
            MappingOptions::default(),
        )
        .unwrap();
        let l = &rep.layers[0];
        assert_eq!(l.passes, 196);
        assert_eq!(l.utilization, 0.28125);
        assert_eq!(l.input_reads, 112_896);
        assert_eq!(l.output_writes, 25_088);
        assert_eq!(l.psum_updates, 25_088);
        assert_eq!(rep.total.utilization, 0.28125);
    }

    #[test]
    fn report_exact_fit() {
        let rep = report(
            &example_net(),
            ArraySpec::new(576, 128).unwrap(),
            MappingOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.layers[0].utilization, 1.0);
    }

    #[test]
    fn fc_single_position() {
        let net = NetworkSpec::new(
            "fc",
            Dims::new(6, 6, 256),
            vec![LayerSpec::fc("fc", 6, 6, 4096, &[])],
        );
        let array = ArraySpec::new(1024, 1024).unwrap();
        let rep = report(&net, array, MappingOptions::default()).unwrap();
        let l = &rep.layers[0];
        // T_r = ceil(9216/1024) = 9, T_c = 4
        assert_eq!(l.passes, 9 * 4);
        assert_eq!(l.input_reads, 4 * 9216);
        assert_eq!(l.psum_updates, 9 * 4096);
    }

    #[test]
    fn sweep_preserves_order_and_matches_report() {
        let sizes: Vec<_> = [4096, 128, 512]
            .iter()
            .map(|&n| ArraySpec::square(n).unwrap())
            .collect();
        let table = sweep_arrays(&example_net(), &sizes, MappingOptions::default()).unwrap();
        assert_eq!(table.rows.len(), 3);
        for (row, size) in table.rows.iter().zip(&sizes) {
            assert_eq!(row.array, *size);
            assert_eq!(
                *row,
                report(&example_net(), *size, MappingOptions::default()).unwrap()
            );
        }
        assert!(sweep_arrays(&example_net(), &[], MappingOptions::default()).is_err());
    }
}

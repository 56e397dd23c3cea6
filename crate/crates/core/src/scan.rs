//! Two-dimensional cross sections of the certified region: grid two control
//! entries around the base point, classify every cell by certification and
//! by the Newton-Raphson ground truth, and emit CSV and SVG renderings.

use crate::basis::RestrictionModel;
use crate::error::{Error, Result};
use crate::matpower::NetworkCase;
use crate::network::{build_admittance, IndexMaps};
use crate::powerflow::{check_operational, flat_start, nr_solve};
use crate::restriction::{certify, CertifyOptions};
use rayon::prelude::*;
use std::io::Write;

/// Grid specification over two ns-bus injection axes.
#[derive(Debug, Clone)]
pub struct ScanSpec {
    /// Positions in the ns ordering.
    pub axis1: usize,
    pub axis2: usize,
    /// External bus ids, kept for labeling.
    pub bus1_id: usize,
    pub bus2_id: usize,
    /// Injection offsets around the base value, pu.
    pub range1: (f64, f64),
    pub range2: (f64, f64),
    pub resolution: usize,
    pub ground_truth: bool,
}

impl ScanSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn from_bus_ids(
        case: &NetworkCase,
        idx: &IndexMaps,
        bus1: usize,
        bus2: usize,
        range1: (f64, f64),
        range2: (f64, f64),
        resolution: usize,
        ground_truth: bool,
    ) -> Result<Self> {
        if bus1 == bus2 {
            return Err(Error::Precondition {
                detail: "scan axes must use two different buses".into(),
            });
        }
        if resolution < 2 {
            return Err(Error::Precondition {
                detail: "scan resolution must be at least 2".into(),
            });
        }
        let pos = |bus: usize| -> Result<usize> {
            let i = case.bus_index(bus).ok_or_else(|| Error::Precondition {
                detail: format!("bus {bus} not present in the case"),
            })?;
            idx.ns_pos(i).ok_or_else(|| Error::Precondition {
                detail: format!("bus {bus} is the slack bus and has no free injection"),
            })
        };
        Ok(ScanSpec {
            axis1: pos(bus1)?,
            axis2: pos(bus2)?,
            bus1_id: bus1,
            bus2_id: bus2,
            range1,
            range2,
            resolution,
            ground_truth,
        })
    }

    fn offset(range: (f64, f64), i: usize, res: usize) -> f64 {
        range.0 + (range.1 - range.0) * (i as f64) / ((res - 1) as f64)
    }
}

/// Ground-truth label of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    Feasible,
    InfeasibleConstraint,
    Diverged,
    Skipped,
}

impl Truth {
    pub fn as_str(&self) -> &'static str {
        match self {
            Truth::Feasible => "feasible",
            Truth::InfeasibleConstraint => "infeasible",
            Truth::Diverged => "diverged",
            Truth::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanCell {
    pub u1: f64,
    pub u2: f64,
    pub certified: bool,
    pub truth: Truth,
    pub cert_iterations: usize,
}

/// Row-major grid (axis1 outer, axis2 inner) of classified cells.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub spec: ScanSpec,
    /// Base injections of the two axes.
    pub base: (f64, f64),
    pub cells: Vec<ScanCell>,
}

impl ScanResult {
    pub fn cell(&self, i1: usize, i2: usize) -> &ScanCell {
        &self.cells[i1 * self.spec.resolution + i2]
    }

    pub fn certified_count(&self) -> usize {
        self.cells.iter().filter(|c| c.certified).count()
    }

    pub fn feasible_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| c.truth == Truth::Feasible)
            .count()
    }

    /// Necessary condition for a convex certified cross-section: along every
    /// grid line in both directions, certified cells form one contiguous run.
    pub fn certified_runs_contiguous(&self) -> bool {
        let res = self.spec.resolution;
        let contiguous = |cells: &mut dyn Iterator<Item = bool>| {
            let mut runs = 0;
            let mut prev = false;
            for c in cells {
                if c && !prev {
                    runs += 1;
                }
                prev = c;
            }
            runs <= 1
        };
        for i1 in 0..res {
            if !contiguous(&mut (0..res).map(|i2| self.cell(i1, i2).certified)) {
                return false;
            }
        }
        for i2 in 0..res {
            if !contiguous(&mut (0..res).map(|i1| self.cell(i1, i2).certified)) {
                return false;
            }
        }
        true
    }
}

/// Run the grid: certify every cell and, when requested, classify it by the
/// ground-truth oracle (warm-started Newton-Raphson with a flat-start retry,
/// then the operational check).
///
/// Fails with a diagnostic if any cell is certified yet ground-truth
/// infeasible or divergent; that would falsify the soundness guarantee.
pub fn cross_section(
    model: &RestrictionModel,
    case: &NetworkCase,
    spec: &ScanSpec,
) -> Result<ScanResult> {
    if spec.resolution < 2 || spec.axis1 == spec.axis2 {
        return Err(Error::Precondition {
            detail: "invalid scan spec".into(),
        });
    }
    let adm = build_admittance(case)?;
    let idx = IndexMaps::new(case);
    let res = spec.resolution;
    let opts = CertifyOptions::default();
    let base_u = &model.base_u;

    let cells: Vec<ScanCell> = (0..res * res)
        .into_par_iter()
        .map(|cell_index| {
            let (i1, i2) = (cell_index / res, cell_index % res);
            let o1 = ScanSpec::offset(spec.range1, i1, res);
            let o2 = ScanSpec::offset(spec.range2, i2, res);
            let mut u = base_u.clone();
            u.p_ns[spec.axis1] += o1;
            u.p_ns[spec.axis2] += o2;

            let cert = certify(&u, model, &opts);
            let truth = if spec.ground_truth {
                let solved = nr_solve(&adm, &idx, &u, &model.base_state, 1e-8, 50)
                    .or_else(|_| nr_solve(&adm, &idx, &u, &flat_start(&idx, &u), 1e-8, 50));
                match solved {
                    Ok(state) => {
                        if check_operational(case, &idx, &state, &adm).feasible {
                            Truth::Feasible
                        } else {
                            Truth::InfeasibleConstraint
                        }
                    }
                    Err(_) => Truth::Diverged,
                }
            } else {
                Truth::Skipped
            };
            ScanCell {
                u1: base_u.p_ns[spec.axis1] + o1,
                u2: base_u.p_ns[spec.axis2] + o2,
                certified: cert.is_certified(),
                truth,
                cert_iterations: cert.iterations,
            }
        })
        .collect();

    for cell in &cells {
        if cell.certified && matches!(cell.truth, Truth::InfeasibleConstraint | Truth::Diverged) {
            return Err(Error::Soundness {
                detail: format!(
                    "certified cell at u1 = {:.9}, u2 = {:.9} is ground-truth {}",
                    cell.u1,
                    cell.u2,
                    cell.truth.as_str()
                ),
            });
        }
    }

    Ok(ScanResult {
        spec: spec.clone(),
        base: (base_u.p_ns[spec.axis1], base_u.p_ns[spec.axis2]),
        cells,
    })
}

/// Plain decimal with nine significant digits.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (8 - exp).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

/// Write the grid as RFC 4180 CSV with LF line endings.
pub fn emit_csv(result: &ScanResult, sink: &mut dyn Write) -> std::io::Result<()> {
    sink.write_all(b"u1,u2,certified,truth,iterations\n")?;
    for cell in &result.cells {
        writeln!(
            sink,
            "{},{},{},{},{}",
            fmt_sig9(cell.u1),
            fmt_sig9(cell.u2),
            cell.certified,
            cell.truth.as_str(),
            cell.cert_iterations
        )?;
    }
    Ok(())
}

/// Colors and geometry of the SVG rendering.
#[derive(Debug, Clone)]
pub struct SvgStyle {
    pub canvas: usize,
    pub certified: &'static str,
    pub feasible: &'static str,
    pub infeasible: &'static str,
    pub diverged: &'static str,
    pub skipped: &'static str,
}

impl Default for SvgStyle {
    fn default() -> Self {
        SvgStyle {
            canvas: 480,
            certified: "#2166ac",
            feasible: "#a6dba0",
            infeasible: "#f4a582",
            diverged: "#bababa",
            skipped: "#f7f7f7",
        }
    }
}

/// Render the grid as a standalone SVG: one rect per cell colored by
/// (certified, truth), a base-point marker, axis labels, and a legend.
/// Output is deterministic for identical inputs.
pub fn emit_svg(
    result: &ScanResult,
    sink: &mut dyn Write,
    style: &SvgStyle,
) -> std::io::Result<()> {
    let res = result.spec.resolution;
    let plot = style.canvas as f64;
    let (ml, mt, mr, mb) = (70.0, 40.0, 180.0, 55.0);
    let width = plot + ml + mr;
    let height = plot + mt + mb;
    let cell_px = plot / res as f64;

    writeln!(
        sink,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )?;
    writeln!(
        sink,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    )?;
    writeln!(
        sink,
        r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">certified region vs ground truth (buses {} and {})</text>"#,
        ml + plot / 2.0,
        result.spec.bus1_id,
        result.spec.bus2_id
    )?;

    // cells: axis1 along x, axis2 along y (origin bottom-left)
    for i1 in 0..res {
        for i2 in 0..res {
            let cell = result.cell(i1, i2);
            let color = if cell.certified {
                style.certified
            } else {
                match cell.truth {
                    Truth::Feasible => style.feasible,
                    Truth::InfeasibleConstraint => style.infeasible,
                    Truth::Diverged => style.diverged,
                    Truth::Skipped => style.skipped,
                }
            };
            let x = ml + i1 as f64 * cell_px;
            let y = mt + plot - (i2 as f64 + 1.0) * cell_px;
            writeln!(
                sink,
                r#"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                cell_px, cell_px
            )?;
        }
    }

    // frame and axis labels
    writeln!(
        sink,
        r#"<rect x="{ml:.2}" y="{mt:.2}" width="{plot:.2}" height="{plot:.2}" fill="none" stroke="black" stroke-width="1"/>"#
    )?;
    let first = &result.cells[0];
    let last = &result.cells[res * res - 1];
    for (value, x) in [(first.u1, ml), (last.u1, ml + plot)] {
        writeln!(
            sink,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            mt + plot + 16.0,
            fmt_sig9(value)
        )?;
    }
    for (value, y) in [(first.u2, mt + plot), (last.u2, mt)] {
        writeln!(
            sink,
            r#"<text x="{:.2}" y="{y:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            ml - 6.0,
            fmt_sig9(value)
        )?;
    }
    writeln!(
        sink,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle">p injection at bus {} [pu]</text>"#,
        ml + plot / 2.0,
        mt + plot + 40.0,
        result.spec.bus1_id
    )?;
    writeln!(
        sink,
        r#"<text x="18" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">p injection at bus {} [pu]</text>"#,
        mt + plot / 2.0,
        mt + plot / 2.0,
        result.spec.bus2_id
    )?;

    // base point marker
    let span1 = last.u1 - first.u1;
    let span2 = last.u2 - first.u2;
    if span1.abs() > 0.0 && span2.abs() > 0.0 {
        let bx = ml + (result.base.0 - first.u1) / span1 * plot;
        let by = mt + plot - (result.base.1 - first.u2) / span2 * plot;
        if (0.0..=plot).contains(&(bx - ml)) && (0.0..=plot).contains(&(by - mt)) {
            writeln!(
                sink,
                r##"<circle cx="{bx:.2}" cy="{by:.2}" r="4" fill="#d62728" stroke="white" stroke-width="1"/>"##
            )?;
        }
    }

    // legend
    let lx = ml + plot + 18.0;
    let entries = [
        (style.certified, "certified"),
        (style.feasible, "feasible (not certified)"),
        (style.infeasible, "constraint violated"),
        (style.diverged, "solver diverged"),
        (style.skipped, "truth skipped"),
    ];
    for (k, (color, label)) in entries.iter().enumerate() {
        let y = mt + 10.0 + k as f64 * 22.0;
        writeln!(
            sink,
            r#"<rect x="{lx:.2}" y="{y:.2}" width="14" height="14" fill="{color}" stroke="black" stroke-width="0.5"/>"#
        )?;
        writeln!(
            sink,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{label}</text>"#,
            lx + 20.0,
            y + 11.0
        )?;
    }
    writeln!(
        sink,
        r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#d62728" stroke="white" stroke-width="1"/>"##,
        lx + 7.0,
        mt + 10.0 + entries.len() as f64 * 22.0 + 7.0
    )?;
    writeln!(
        sink,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">base point</text>"#,
        lx + 20.0,
        mt + 10.0 + entries.len() as f64 * 22.0 + 11.0
    )?;
    writeln!(sink, "</svg>")?;
    Ok(())
}

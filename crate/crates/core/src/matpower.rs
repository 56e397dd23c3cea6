//! MATPOWER case-file parsing into a validated, per-unit network description.
//!
//! Only the `baseMVA`, `bus`, `gen`, and `branch` blocks are read; `gencost`
//! and other extensions are skipped. Out-of-service branches and generators
//! are dropped during parsing, and multiple generators at one bus are
//! aggregated into a single injection, so the resulting [`NetworkCase`] has
//! exactly one generator entry per generator bus and no status flags.

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// Bus role in the power flow formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// External bus number from the case file.
    pub id: usize,
    pub kind: BusKind,
    /// Active power demand, per-unit on the system base.
    pub p_demand: f64,
    /// Reactive power demand, per-unit.
    pub q_demand: f64,
    /// Shunt conductance, per-unit (MW at V = 1.0 in the file).
    pub shunt_g: f64,
    /// Shunt susceptance, per-unit (MVAr at V = 1.0 in the file).
    pub shunt_b: f64,
    /// Initial voltage magnitude, per-unit.
    pub vm_init: f64,
    /// Initial voltage angle, radians.
    pub va_init: f64,
    pub v_min: f64,
    pub v_max: f64,
}

/// Aggregated generation at one bus (per-unit).
#[derive(Debug, Clone, PartialEq)]
pub struct Gen {
    pub bus_id: usize,
    pub p_gen: f64,
    pub q_gen: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Voltage setpoint of the first in-service unit at the bus.
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, per-unit.
    pub b_charging: f64,
    /// Off-nominal tap ratio at the from side; 1.0 for lines.
    pub tap: f64,
    /// Phase shift angle, radians.
    pub shift: f64,
    /// Angle-difference limits, radians.
    pub ang_min: f64,
    pub ang_max: f64,
}

/// A parsed, validated grid description with all quantities in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    /// Buses sorted by ascending external id.
    pub buses: Vec<Bus>,
    pub gens: Vec<Gen>,
    pub branches: Vec<Branch>,
}

const DEG_TO_RAD: f64 = std::f64::consts::PI / 180.0;
/// Default angle-difference limit applied when the file leaves
/// `angmin = angmax = 0` (MATPOWER's "unconstrained" convention).
pub const DEFAULT_ANGLE_LIMIT_RAD: f64 = 60.0 * DEG_TO_RAD;

/// Parse MATPOWER m-file text into a validated [`NetworkCase`].
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let stripped = strip_comments(text);
    let name = find_case_name(&stripped).unwrap_or_else(|| "case".to_string());
    let base_mva = find_scalar(&stripped, "baseMVA")?;
    if base_mva <= 0.0 || base_mva.is_nan() {
        return Err(Error::validation("baseMVA must be positive"));
    }

    let bus_rows = find_matrix(&stripped, "bus")?;
    let gen_rows = find_matrix(&stripped, "gen")?;
    let branch_rows = find_matrix(&stripped, "branch")?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    for (row, line) in &bus_rows {
        if row.len() < 13 {
            return Err(Error::syntax(
                *line,
                format!("bus row has {} columns, expected at least 13", row.len()),
            ));
        }
        let kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            other => {
                return Err(Error::validation(format!(
                    "bus {} has unsupported type {}",
                    row[0] as i64, other
                )))
            }
        };
        buses.push(Bus {
            id: row[0] as usize,
            kind,
            p_demand: row[2] / base_mva,
            q_demand: row[3] / base_mva,
            shunt_g: row[4] / base_mva,
            shunt_b: row[5] / base_mva,
            vm_init: row[7],
            va_init: row[8] * DEG_TO_RAD,
            v_max: row[11],
            v_min: row[12],
        });
    }
    buses.sort_by_key(|b| b.id);

    let mut gens: Vec<Gen> = Vec::new();
    for (row, line) in &gen_rows {
        if row.len() < 10 {
            return Err(Error::syntax(
                *line,
                format!("gen row has {} columns, expected at least 10", row.len()),
            ));
        }
        if row[7] <= 0.0 {
            continue; // out of service
        }
        let (q_max, q_min) = (row[3] / base_mva, row[4] / base_mva);
        if q_min > q_max {
            return Err(Error::validation(format!(
                "generator at bus {} has q_min > q_max",
                row[0] as usize
            )));
        }
        let bus_id = row[0] as usize;
        match gens.iter_mut().find(|g| g.bus_id == bus_id) {
            Some(existing) => {
                existing.p_gen += row[1] / base_mva;
                existing.q_gen += row[2] / base_mva;
                existing.q_max += q_max;
                existing.q_min += q_min;
            }
            None => gens.push(Gen {
                bus_id,
                p_gen: row[1] / base_mva,
                q_gen: row[2] / base_mva,
                q_max,
                q_min,
                v_set: row[5],
            }),
        }
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (row, line) in &branch_rows {
        if row.len() < 11 {
            return Err(Error::syntax(
                *line,
                format!("branch row has {} columns, expected at least 11", row.len()),
            ));
        }
        if row[10] <= 0.0 {
            continue; // out of service
        }
        let tap = if row[8] == 0.0 { 1.0 } else { row[8] };
        let (mut ang_min, mut ang_max) = if row.len() >= 13 {
            (row[11] * DEG_TO_RAD, row[12] * DEG_TO_RAD)
        } else {
            (0.0, 0.0)
        };
        if ang_min == 0.0 && ang_max == 0.0 {
            ang_min = -DEFAULT_ANGLE_LIMIT_RAD;
            ang_max = DEFAULT_ANGLE_LIMIT_RAD;
        }
        branches.push(Branch {
            from_bus: row[0] as usize,
            to_bus: row[1] as usize,
            r: row[2],
            x: row[3],
            b_charging: row[4],
            tap,
            shift: row[9] * DEG_TO_RAD,
            ang_min,
            ang_max,
        });
    }

    let mut case = NetworkCase {
        name,
        base_mva,
        buses,
        gens,
        branches,
    };
    demote_generatorless_pv(&mut case);
    case.validate()?;
    Ok(case)
}

/// Read and parse a case file from disk.
pub fn parse_case_path(path: &std::path::Path) -> Result<NetworkCase> {
    let text = std::fs::read_to_string(path)?;
    parse_case(&text)
}

/// A PV bus with no in-service generator has no reactive support and is
/// treated as PQ, mirroring MATPOWER's ext2int conversion.
fn demote_generatorless_pv(case: &mut NetworkCase) {
    for bus in &mut case.buses {
        if bus.kind == BusKind::Pv && !case.gens.iter().any(|g| g.bus_id == bus.id) {
            bus.kind = BusKind::Pq;
        }
    }
}

impl NetworkCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus id in the sorted bus list.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn gen_at(&self, bus_id: usize) -> Option<&Gen> {
        self.gens.iter().find(|g| g.bus_id == bus_id)
    }

    fn validate(&self) -> Result<()> {
        let slack_count = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if slack_count != 1 {
            return Err(Error::validation(format!(
                "exactly one slack bus required, found {slack_count}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                return Err(Error::validation(format!("duplicate bus id {}", bus.id)));
            }
            if bus.v_min > bus.v_max {
                return Err(Error::validation(format!(
                    "bus {} has v_min > v_max",
                    bus.id
                )));
            }
            if bus.vm_init <= 0.0 {
                return Err(Error::validation(format!(
                    "bus {} has non-positive initial voltage",
                    bus.id
                )));
            }
        }
        for gen in &self.gens {
            if self.bus_index(gen.bus_id).is_none() {
                return Err(Error::validation(format!(
                    "generator references missing bus {}",
                    gen.bus_id
                )));
            }
            if gen.q_min > gen.q_max {
                return Err(Error::validation(format!(
                    "generator at bus {} has q_min > q_max",
                    gen.bus_id
                )));
            }
        }
        for br in &self.branches {
            if self.bus_index(br.from_bus).is_none() || self.bus_index(br.to_bus).is_none() {
                return Err(Error::validation(format!(
                    "branch {}-{} references a missing bus",
                    br.from_bus, br.to_bus
                )));
            }
            if br.from_bus == br.to_bus {
                return Err(Error::validation(format!(
                    "branch {}-{} is a self-loop",
                    br.from_bus, br.to_bus
                )));
            }
            if br.r * br.r + br.x * br.x == 0.0 {
                return Err(Error::validation(format!(
                    "branch {}-{} has zero series impedance",
                    br.from_bus, br.to_bus
                )));
            }
            if br.ang_min > br.ang_max {
                return Err(Error::validation(format!(
                    "branch {}-{} has ang_min > ang_max",
                    br.from_bus, br.to_bus
                )));
            }
            if br.tap <= 0.0 {
                return Err(Error::validation(format!(
                    "branch {}-{} has non-positive tap ratio",
                    br.from_bus, br.to_bus
                )));
            }
        }
        if !self.is_connected() {
            return Err(Error::validation(
                "in-service branch graph is not connected",
            ));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        if n == 0 {
            return false;
        }
        let mut adjacency = vec![Vec::new(); n];
        for br in &self.branches {
            let (f, t) = (
                self.bus_index(br.from_bus).unwrap(),
                self.bus_index(br.to_bus).unwrap(),
            );
            adjacency[f].push(t);
            adjacency[t].push(f);
        }
        let mut visited = vec![false; n];
        let mut stack = vec![0usize];
        visited[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &adjacency[i] {
                if !visited[j] {
                    visited[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }

    /// Replace the PQ-bus voltage limits with a symmetric band of the given
    /// fractional width around a base magnitude profile.
    ///
    /// `vm_base` supplies solved base magnitudes indexed like `buses`; when
    /// absent the stored initial magnitudes are used.
    pub fn scale_voltage_limits(&self, fraction: f64, vm_base: Option<&[f64]>) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Precondition {
                detail: format!("voltage-limit fraction must lie in (0, 1), got {fraction}"),
            });
        }
        if let Some(vm) = vm_base {
            if vm.len() != self.buses.len() {
                return Err(Error::Precondition {
                    detail: "vm_base length must match bus count".into(),
                });
            }
        }
        let mut out = self.clone();
        for (i, bus) in out.buses.iter_mut().enumerate() {
            if bus.kind == BusKind::Pq {
                let base = vm_base.map_or(bus.vm_init, |vm| vm[i]);
                bus.v_min = base * (1.0 - fraction);
                bus.v_max = base * (1.0 + fraction);
            }
        }
        Ok(out)
    }

    /// Serialize back to MATPOWER m-file syntax. Parsing the output yields an
    /// equal `NetworkCase`; quantities are converted back to MW and degrees.
    pub fn to_case_string(&self) -> String {
        let base = self.base_mva;
        let mut s = String::new();
        let _ = writeln!(s, "function mpc = {}", self.name);
        s.push_str("mpc.version = '2';\n");
        let _ = writeln!(s, "mpc.baseMVA = {};", fmt(base));
        s.push_str("mpc.bus = [\n");
        for b in &self.buses {
            let kind = match b.kind {
                BusKind::Pq => 1,
                BusKind::Pv => 2,
                BusKind::Slack => 3,
            };
            let _ = writeln!(
                s,
                "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t0\t1\t{}\t{};",
                b.id,
                kind,
                fmt(b.p_demand * base),
                fmt(b.q_demand * base),
                fmt(b.shunt_g * base),
                fmt(b.shunt_b * base),
                fmt(b.vm_init),
                fmt(b.va_init / DEG_TO_RAD),
                fmt(b.v_max),
                fmt(b.v_min),
            );
        }
        s.push_str("];\nmpc.gen = [\n");
        for g in &self.gens {
            let _ = writeln!(
                s,
                "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t1\t0\t0;",
                g.bus_id,
                fmt(g.p_gen * base),
                fmt(g.q_gen * base),
                fmt(g.q_max * base),
                fmt(g.q_min * base),
                fmt(g.v_set),
                fmt(base),
            );
        }
        s.push_str("];\nmpc.branch = [\n");
        for br in &self.branches {
            let _ = writeln!(
                s,
                "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t1\t{}\t{};",
                br.from_bus,
                br.to_bus,
                fmt(br.r),
                fmt(br.x),
                fmt(br.b_charging),
                fmt(br.tap),
                fmt(br.shift / DEG_TO_RAD),
                fmt(br.ang_min / DEG_TO_RAD),
                fmt(br.ang_max / DEG_TO_RAD),
            );
        }
        s.push_str("];\n");
        s
    }
}

/// Shortest decimal that round-trips the value exactly.
fn fmt(x: f64) -> String {
    format!("{x}")
}

fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        match line.find('%') {
            Some(pos) => out.push_str(&line[..pos]),
            None => out.push_str(line),
        }
        out.push('\n');
    }
    out
}

fn find_case_name(text: &str) -> Option<String> {
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("function") {
            if let Some(eq) = rest.find('=') {
                return Some(rest[eq + 1..].trim().trim_end_matches(';').to_string());
            }
        }
    }
    None
}

fn find_scalar(text: &str, field: &str) -> Result<f64> {
    let key = format!("mpc.{field}");
    for (lineno, line) in text.lines().enumerate() {
        if let Some(pos) = line.find(&key) {
            let rest = &line[pos + key.len()..];
            let rest = rest.trim_start();
            let Some(rest) = rest.strip_prefix('=') else {
                continue;
            };
            let value = rest.trim().trim_end_matches(';').trim();
            return value.parse::<f64>().map_err(|_| {
                Error::syntax(lineno + 1, format!("cannot parse {field} value '{value}'"))
            });
        }
    }
    Err(Error::syntax(0, format!("missing mpc.{field}")))
}

type Rows = Vec<(Vec<f64>, usize)>;

/// Locate `mpc.<field> = [ ... ];` and parse its semicolon-separated rows.
fn find_matrix(text: &str, field: &str) -> Result<Rows> {
    let key = format!("mpc.{field}");
    let mut offset = 0usize;
    let start = loop {
        let Some(pos) = text[offset..].find(&key) else {
            return Err(Error::syntax(0, format!("missing mpc.{field} block")));
        };
        let abs = offset + pos;
        let after = &text[abs + key.len()..];
        // reject prefixes like mpc.gencost when looking for mpc.gen
        if after.starts_with(|c: char| c.is_alphanumeric() || c == '_') {
            offset = abs + key.len();
            continue;
        }
        let Some(eq) = after.find('=') else {
            offset = abs + key.len();
            continue;
        };
        let Some(open) = after[eq..].find('[') else {
            offset = abs + key.len();
            continue;
        };
        break abs + key.len() + eq + open + 1;
    };
    let Some(close) = text[start..].find(']') else {
        return Err(Error::syntax(
            line_of(text, start),
            format!("unterminated mpc.{field} matrix"),
        ));
    };
    let body = &text[start..start + close];
    let body_line = line_of(text, start);

    let mut rows = Rows::new();
    for (i, raw) in body.split(';').enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for token in raw.split_whitespace() {
            // tolerate comma-separated tables
            for piece in token.split(',').filter(|p| !p.is_empty()) {
                let v = piece.parse::<f64>().map_err(|_| {
                    Error::syntax(
                        body_line + i,
                        format!("cannot parse number '{piece}' in mpc.{field}"),
                    )
                })?;
                row.push(v);
            }
        }
        rows.push((row, body_line + i));
    }
    Ok(rows)
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte].bytes().filter(|&b| b == b'\n').count() + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::TWO_BUS;

    #[test]
    fn parses_minimal_two_bus() {
        let case = parse_case(TWO_BUS).unwrap();
        assert_eq!(case.name, "case2");
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.gens.len(), 1);
        let br = &case.branches[0];
        assert_eq!(br.x, 0.1);
        assert_eq!(br.tap, 1.0, "tap 0 normalizes to 1");
        assert_eq!(br.ang_max, DEFAULT_ANGLE_LIMIT_RAD);
        assert_eq!(br.ang_min, -DEFAULT_ANGLE_LIMIT_RAD);
        assert_eq!(case.buses[0].kind, BusKind::Slack);
        assert_eq!(case.buses[1].kind, BusKind::Pq);
    }

    #[test]
    fn missing_bus_reference_is_rejected() {
        let text = TWO_BUS.replace("\t1\t2\t0\t0.1", "\t1\t99\t0\t0.1");
        let err = parse_case(&text).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn zero_impedance_branch_is_rejected() {
        let text = TWO_BUS.replace("\t1\t2\t0\t0.1", "\t1\t2\t0\t0");
        let err = parse_case(&text).unwrap_err();
        assert!(err.to_string().contains("zero series impedance"), "{err}");
    }

    #[test]
    fn two_slack_buses_rejected() {
        let text = TWO_BUS.replace("\t2\t1\t0", "\t2\t3\t0");
        let err = parse_case(&text).unwrap_err();
        assert!(err.to_string().contains("slack"), "{err}");
    }

    #[test]
    fn disconnected_graph_rejected() {
        let text = TWO_BUS.replace(
            "\t2\t1\t0\t0\t0\t0\t1\t1\t0\t345\t1\t1.5\t0.5;",
            "\t2\t1\t0\t0\t0\t0\t1\t1\t0\t345\t1\t1.5\t0.5;\n\t3\t1\t0\t0\t0\t0\t1\t1\t0\t345\t1\t1.5\t0.5;",
        );
        let err = parse_case(&text).unwrap_err();
        assert!(err.to_string().contains("connected"), "{err}");
    }

    #[test]
    fn wrong_column_count_is_syntax_error() {
        let text = TWO_BUS.replace("\t1\t2\t0\t0.1\t0\t0\t0\t0\t0\t0\t1\t0\t0;", "\t1\t2\t0;");
        let err = parse_case(&text).unwrap_err();
        assert!(matches!(err, Error::Syntax { .. }), "{err}");
    }

    #[test]
    fn out_of_service_equipment_dropped_and_gens_aggregated() {
        let text = TWO_BUS
            .replace(
                "mpc.gen = [\n\t1\t0\t0\t999\t-999\t1\t100\t1\t999\t-999;",
                "mpc.gen = [\n\t1\t10\t1\t100\t-100\t1\t100\t1\t999\t-999;\n\t1\t20\t2\t50\t-50\t1.02\t100\t1\t999\t-999;\n\t2\t5\t0\t10\t-10\t1\t100\t0\t999\t-999;",
            )
            .replace(
                "\t1\t2\t0\t0.1\t0\t0\t0\t0\t0\t0\t1\t0\t0;",
                "\t1\t2\t0\t0.1\t0\t0\t0\t0\t0\t0\t1\t0\t0;\n\t1\t2\t0\t0.4\t0\t0\t0\t0\t0\t0\t0\t0\t0;",
            );
        let case = parse_case(&text).unwrap();
        assert_eq!(case.branches.len(), 1, "out-of-service branch dropped");
        assert_eq!(
            case.gens.len(),
            1,
            "out-of-service gen dropped, rest merged"
        );
        let g = &case.gens[0];
        assert!((g.p_gen - 0.3).abs() < 1e-15);
        assert!((g.q_gen - 0.03).abs() < 1e-15);
        assert!((g.q_max - 1.5).abs() < 1e-15);
        assert!((g.q_min + 1.5).abs() < 1e-15);
        assert_eq!(g.v_set, 1.0, "setpoint from first unit");
    }

    #[test]
    fn pv_bus_without_generator_becomes_pq() {
        let text = TWO_BUS.replace("\t2\t1\t0", "\t2\t2\t0");
        let case = parse_case(&text).unwrap();
        assert_eq!(case.buses[1].kind, BusKind::Pq);
    }

    #[test]
    fn scale_voltage_limits_examples() {
        let case = parse_case(TWO_BUS).unwrap();
        let scaled = case.scale_voltage_limits(0.5, None).unwrap();
        assert_eq!(scaled.buses[1].v_min, 0.5);
        assert_eq!(scaled.buses[1].v_max, 1.5);
        // slack bus untouched
        assert_eq!(scaled.buses[0].v_min, 0.5);
        assert_eq!(scaled.buses[0].v_max, 1.5);

        let vm = vec![1.0, 1.02];
        let scaled = case.scale_voltage_limits(0.01, Some(&vm)).unwrap();
        assert!((scaled.buses[1].v_min - 1.02 * 0.99).abs() < 1e-15);
        assert!((scaled.buses[1].v_max - 1.02 * 1.01).abs() < 1e-15);

        assert!(case.scale_voltage_limits(0.0, None).is_err());
        assert!(case.scale_voltage_limits(1.0, None).is_err());
    }

    #[test]
    fn dump_round_trips() {
        let case = parse_case(TWO_BUS).unwrap();
        let again = parse_case(&case.to_case_string()).unwrap();
        assert_eq!(case, again);
    }
}

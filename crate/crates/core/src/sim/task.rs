use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::Rng;

use super::SimError;
use crate::seeding;

/// Geometric and physical parameters of one insertion task.
///
/// Lengths are millimetres; the hole is centred at `hole_center_x` in the
/// world frame, whose origin is the nominal hover position projected onto
/// the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: u64,
    pub hole_center_x: f64,
    /// Hole half-width minus peg half-width.
    pub clearance: f64,
    pub hole_depth: f64,
    pub peg_half_width: f64,
    /// Size of the 45 degree entry bevel.
    pub chamfer: f64,
    pub friction_coeff: f64,
    /// N/mm
    pub contact_stiffness: f64,
    /// N*s/mm
    pub contact_damping: f64,
    pub success_depth_frac: f64,
    /// Drawn outside the training ranges.
    pub out_of_distribution: bool,
    /// Evaluation skips start-pose noise for this task.
    pub no_start_noise: bool,
}

/// Sampling ranges for task families.
pub mod ranges {
    use std::ops::RangeInclusive;

    pub const HOLE_CENTER_X: RangeInclusive<f64> = -10.0..=10.0;
    pub const CLEARANCE: RangeInclusive<f64> = 0.1..=1.0;
    pub const CHAMFER: RangeInclusive<f64> = 0.0..=1.0;
    pub const FRICTION: RangeInclusive<f64> = 0.1..=0.8;
    pub const HOLE_DEPTH: RangeInclusive<f64> = 4.0..=8.0;
    pub const PEG_HALF_WIDTH: RangeInclusive<f64> = 2.0..=4.0;
    /// Clearance range of out-of-distribution tasks, strictly below the
    /// training minimum.
    pub const OOD_CLEARANCE: RangeInclusive<f64> = 0.03..=0.07;
    /// Chamfer range of out-of-distribution tasks.
    pub const OOD_CHAMFER: RangeInclusive<f64> = 0.0..=0.2;
}

pub const DEFAULT_STIFFNESS: f64 = 50.0;
pub const DEFAULT_DAMPING: f64 = 1.0;
pub const DEFAULT_SUCCESS_DEPTH_FRAC: f64 = 0.9;

fn draw(rng: &mut impl Rng, r: &RangeInclusive<f64>) -> f64 {
    let u: f64 = rng.random();
    r.start() + u * (r.end() - r.start())
}

impl TaskSpec {
    /// Draw one in-distribution task. The draw order is fixed: centre,
    /// clearance, depth, peg half-width, chamfer, friction.
    pub fn sample(task_id: u64, rng: &mut impl Rng) -> Self {
        let hole_center_x = draw(rng, &ranges::HOLE_CENTER_X);
        let clearance = draw(rng, &ranges::CLEARANCE);
        let hole_depth = draw(rng, &ranges::HOLE_DEPTH);
        let peg_half_width = draw(rng, &ranges::PEG_HALF_WIDTH);
        let chamfer = draw(rng, &ranges::CHAMFER);
        let friction_coeff = draw(rng, &ranges::FRICTION);
        TaskSpec {
            task_id,
            hole_center_x,
            clearance,
            hole_depth,
            peg_half_width,
            chamfer,
            friction_coeff,
            contact_stiffness: DEFAULT_STIFFNESS,
            contact_damping: DEFAULT_DAMPING,
            success_depth_frac: DEFAULT_SUCCESS_DEPTH_FRAC,
            out_of_distribution: false,
            no_start_noise: false,
        }
    }

    /// A hole centred under the nominal start pose with generous clearance
    /// and chamfer. Handy for tests and smoke runs.
    pub fn easy(task_id: u64) -> Self {
        TaskSpec {
            task_id,
            hole_center_x: 0.0,
            clearance: 1.0,
            hole_depth: 5.0,
            peg_half_width: 3.0,
            chamfer: 1.0,
            friction_coeff: 0.3,
            contact_stiffness: DEFAULT_STIFFNESS,
            contact_damping: DEFAULT_DAMPING,
            success_depth_frac: DEFAULT_SUCCESS_DEPTH_FRAC,
            out_of_distribution: false,
            no_start_noise: false,
        }
    }

    pub fn hole_half_width(&self) -> f64 {
        self.peg_half_width + self.clearance
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidTask { task_id: self.task_id, reason: what.to_string() });
        let finite = [
            self.hole_center_x,
            self.clearance,
            self.hole_depth,
            self.peg_half_width,
            self.chamfer,
            self.friction_coeff,
            self.contact_stiffness,
            self.contact_damping,
            self.success_depth_frac,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite field");
        }
        if self.clearance <= 0.0 {
            return bad("clearance must be > 0");
        }
        if self.hole_depth <= 0.0 {
            return bad("hole_depth must be > 0");
        }
        if self.peg_half_width <= 0.0 {
            return bad("peg_half_width must be > 0");
        }
        if self.chamfer < 0.0 || self.chamfer >= self.hole_depth {
            return bad("chamfer must be in [0, hole_depth)");
        }
        if !(self.success_depth_frac > 0.0 && self.success_depth_frac <= 1.0) {
            return bad("success_depth_frac must be in (0, 1]");
        }
        if self.friction_coeff < 0.0 {
            return bad("friction_coeff must be >= 0");
        }
        if self.contact_stiffness <= 0.0 {
            return bad("contact_stiffness must be > 0");
        }
        if self.contact_damping < 0.0 {
            return bad("contact_damping must be >= 0");
        }
        Ok(())
    }
}

/// Deterministic train/test split of a task family.
///
/// Train tasks get ids `0..n_tasks`, test tasks `n_tasks..n_tasks+holdout`.
/// Both are drawn from the same ranges, so every prefix of `train` is a
/// nested subset of the larger ones.
pub fn make_task_family(seed: u64, n_tasks: usize, holdout: usize) -> Result<(Vec<TaskSpec>, Vec<TaskSpec>), SimError> {
    if n_tasks == 0 {
        return Err(SimError::EmptyFamily);
    }
    let mut rng = seeding::stream(seed, "task-family");
    let train = (0..n_tasks as u64).map(|id| TaskSpec::sample(id, &mut rng)).collect();
    let test = (n_tasks as u64..(n_tasks + holdout) as u64)
        .map(|id| TaskSpec::sample(id, &mut rng))
        .collect();
    Ok((train, test))
}

/// Out-of-distribution tasks: clearance strictly below the training minimum
/// and little or no chamfer. Ids start at `first_id`.
pub fn make_ood_tasks(seed: u64, n: usize, first_id: u64) -> Vec<TaskSpec> {
    let mut rng = seeding::stream(seed, "task-family-ood");
    (0..n as u64)
        .map(|k| {
            let mut t = TaskSpec::sample(first_id + k, &mut rng);
            t.clearance = draw(&mut rng, &ranges::OOD_CLEARANCE);
            t.chamfer = draw(&mut rng, &ranges::OOD_CHAMFER);
            t.out_of_distribution = true;
            t
        })
        .collect()
}

const FIELDS: [&str; 12] = [
    "task_id",
    "hole_center_x",
    "clearance",
    "hole_depth",
    "peg_half_width",
    "chamfer",
    "friction_coeff",
    "contact_stiffness",
    "contact_damping",
    "success_depth_frac",
    "out_of_distribution",
    "no_start_noise",
];

/// Render tasks as keyed text records, one `[task]` block per task.
///
/// Reals are printed with 17 significant digits so parsing restores the
/// exact bits.
pub fn tasks_to_string(tasks: &[TaskSpec]) -> String {
    let mut out = String::from("# insertion task family\n");
    for t in tasks {
        let _ = writeln!(out, "\n[task]");
        let _ = writeln!(out, "task_id = {}", t.task_id);
        for (k, v) in [
            ("hole_center_x", t.hole_center_x),
            ("clearance", t.clearance),
            ("hole_depth", t.hole_depth),
            ("peg_half_width", t.peg_half_width),
            ("chamfer", t.chamfer),
            ("friction_coeff", t.friction_coeff),
            ("contact_stiffness", t.contact_stiffness),
            ("contact_damping", t.contact_damping),
            ("success_depth_frac", t.success_depth_frac),
        ] {
            let _ = writeln!(out, "{k} = {v:.16e}");
        }
        let _ = writeln!(out, "out_of_distribution = {}", t.out_of_distribution);
        let _ = writeln!(out, "no_start_noise = {}", t.no_start_noise);
    }
    out
}

pub fn tasks_from_str(text: &str) -> Result<Vec<TaskSpec>, SimError> {
    let mut records: Vec<Vec<(String, String, usize)>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "[task]" {
            records.push(Vec::new());
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(SimError::Parse { line: i + 1, reason: format!("expected key = value, got {line:?}") });
        };
        let Some(rec) = records.last_mut() else {
            return Err(SimError::Parse { line: i + 1, reason: "field outside of a [task] record".into() });
        };
        rec.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    records.into_iter().map(parse_record).collect()
}

fn parse_record(fields: Vec<(String, String, usize)>) -> Result<TaskSpec, SimError> {
    let mut vals: [Option<(String, usize)>; 12] = Default::default();
    for (k, v, line) in fields {
        let Some(idx) = FIELDS.iter().position(|f| *f == k) else {
            return Err(SimError::Parse { line, reason: format!("unknown key {k:?}") });
        };
        if vals[idx].is_some() {
            return Err(SimError::Parse { line, reason: format!("duplicate key {k:?}") });
        }
        vals[idx] = Some((v, line));
    }
    let get = |i: usize| -> Result<&(String, usize), SimError> {
        vals[i]
            .as_ref()
            .ok_or_else(|| SimError::Parse { line: 0, reason: format!("missing key {:?}", FIELDS[i]) })
    };
    let real = |i: usize| -> Result<f64, SimError> {
        let (v, line) = get(i)?;
        v.parse::<f64>().map_err(|e| SimError::Parse { line: *line, reason: format!("{}: {e}", FIELDS[i]) })
    };
    let flag = |i: usize| -> Result<bool, SimError> {
        let (v, line) = get(i)?;
        v.parse::<bool>().map_err(|e| SimError::Parse { line: *line, reason: format!("{}: {e}", FIELDS[i]) })
    };
    let (id, line) = get(0)?;
    let task_id = id.parse::<u64>().map_err(|e| SimError::Parse { line: *line, reason: format!("task_id: {e}") })?;
    let t = TaskSpec {
        task_id,
        hole_center_x: real(1)?,
        clearance: real(2)?,
        hole_depth: real(3)?,
        peg_half_width: real(4)?,
        chamfer: real(5)?,
        friction_coeff: real(6)?,
        contact_stiffness: real(7)?,
        contact_damping: real(8)?,
        success_depth_frac: real(9)?,
        out_of_distribution: flag(10)?,
        no_start_noise: flag(11)?,
    };
    t.validate()?;
    Ok(t)
}

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::RobotState;
use super::geometry::{norm, sub, Obstacle, Rect, Vec2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }

    fn salt(&self) -> u64 {
        match self {
            Difficulty::Easy => 0x45A5_1E00,
            Difficulty::Medium => 0x3ED1_0300,
            Difficulty::Hard => 0x4A2D_0700,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(format!("unknown difficulty `{other}` (expected easy, medium or hard)")),
        }
    }
}

/// Start pose and goal point of one navigation trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub start: Vec2,
    pub heading: f64,
    pub goal: Vec2,
}

impl Task {
    pub fn start_state(&self) -> RobotState {
        RobotState::at_rest(self.start, self.heading)
    }
}

/// A room with static obstacles and one sampled start/goal pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub extent: Rect,
    pub obstacles: Vec<Obstacle>,
    pub seed: u64,
    pub difficulty: Difficulty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
}

/// Procedural generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub room_size: f64,
    /// Obstacle count for easy, medium, hard.
    pub obstacle_counts: [usize; 3],
    pub circle_radius: [f64; 2],
    pub box_half_extent: [f64; 2],
    /// Minimum free clearance at the start and goal points.
    pub spawn_clearance: f64,
    pub min_start_goal_distance: f64,
    pub max_attempts: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            room_size: 10.0,
            obstacle_counts: [6, 14, 24],
            circle_radius: [0.2, 0.6],
            box_half_extent: [0.2, 0.7],
            spawn_clearance: 0.6,
            min_start_goal_distance: 4.0,
            max_attempts: 64,
        }
    }
}

impl ScenarioSpec {
    pub fn obstacle_count(&self, difficulty: Difficulty) -> usize {
        self.obstacle_counts[difficulty as usize]
    }
}

const MAX_OBSTACLES: usize = 4096;

impl Scenario {
    pub fn new(extent: Rect, obstacles: Vec<Obstacle>, difficulty: Difficulty, seed: u64) -> Self {
        Scenario {
            extent,
            obstacles,
            seed,
            difficulty,
            task: None,
        }
    }

    pub fn with_task(mut self, task: Task) -> Self {
        self.task = Some(task);
        self
    }

    /// Free clearance at `p`: distance to the nearest obstacle or wall.
    pub fn clearance(&self, p: Vec2) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.signed_distance(p))
            .fold(self.extent.interior_clearance(p), f64::min)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serialization is infallible")
    }

    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.extent;
        let finite = e.min.iter().chain(e.max.iter()).all(|v| v.is_finite());
        if !finite || e.min[0] >= e.max[0] || e.min[1] >= e.max[1] {
            return Err(Error::InvalidScenario(format!("degenerate extent {e:?}")));
        }
        if self.obstacles.len() > MAX_OBSTACLES {
            return Err(Error::InvalidScenario(format!(
                "{} obstacles exceeds limit {MAX_OBSTACLES}",
                self.obstacles.len()
            )));
        }
        for (i, ob) in self.obstacles.iter().enumerate() {
            if !ob.is_valid() {
                return Err(Error::InvalidScenario(format!("obstacle {i} has non-positive size or non-finite coordinates")));
            }
            let (lo, hi) = ob.bounds();
            if !(e.contains(lo) && e.contains(hi)) {
                return Err(Error::InvalidScenario(format!("obstacle {i} extends outside the room")));
            }
        }
        if let Some(task) = &self.task {
            let pts = [task.start, task.goal];
            if !task.heading.is_finite() || !pts.iter().all(|p| p.iter().all(|v| v.is_finite()) && e.contains(*p)) {
                return Err(Error::InvalidScenario("task start/goal outside the room".into()));
            }
        }
        Ok(())
    }
}

/// Generates a scenario with the default room layout parameters.
pub fn generate_scenario(difficulty: Difficulty, seed: u64) -> Result<Scenario> {
    generate_scenario_with(&ScenarioSpec::default(), difficulty, seed)
}

/// Deterministic in `(spec, difficulty, seed)`. Retries obstacle layouts until
/// a connected start/goal pair with the required clearance and separation
/// exists.
pub fn generate_scenario_with(spec: &ScenarioSpec, difficulty: Difficulty, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ difficulty.salt());
    let extent = Rect::centered(spec.room_size, spec.room_size);
    let count = spec.obstacle_count(difficulty);
    for _ in 0..spec.max_attempts {
        let obstacles = (0..count).map(|_| random_obstacle(spec, &extent, &mut rng)).collect();
        let mut scenario = Scenario::new(extent, obstacles, difficulty, seed);
        let free = FreeSpace::build(&scenario, spec.spawn_clearance, FreeSpace::DEFAULT_RESOLUTION);
        if let Some(task) = free.sample_task(&scenario, spec.min_start_goal_distance, &mut rng, 256) {
            scenario.task = Some(task);
            return Ok(scenario);
        }
    }
    Err(Error::Generation {
        difficulty,
        seed,
        attempts: spec.max_attempts,
    })
}

fn random_obstacle(spec: &ScenarioSpec, extent: &Rect, rng: &mut impl Rng) -> Obstacle {
    if rng.random_bool(0.5) {
        let radius = rng.random_range(spec.circle_radius[0]..=spec.circle_radius[1]);
        let center = [
            rng.random_range(extent.min[0] + radius..=extent.max[0] - radius),
            rng.random_range(extent.min[1] + radius..=extent.max[1] - radius),
        ];
        Obstacle::Circle { center, radius }
    } else {
        let half_extents = [
            rng.random_range(spec.box_half_extent[0]..=spec.box_half_extent[1]),
            rng.random_range(spec.box_half_extent[0]..=spec.box_half_extent[1]),
        ];
        let center = [
            rng.random_range(extent.min[0] + half_extents[0]..=extent.max[0] - half_extents[0]),
            rng.random_range(extent.min[1] + half_extents[1]..=extent.max[1] - half_extents[1]),
        ];
        Obstacle::Box { center, half_extents }
    }
}

/// Grid of cells whose centres have at least `clearance` free space, labelled
/// by 4-connected component. Used to reject start/goal pairs that are walled
/// off from each other.
#[derive(Debug, Clone)]
pub struct FreeSpace {
    origin: Vec2,
    resolution: f64,
    cols: usize,
    rows: usize,
    clearance: f64,
    labels: Vec<u32>,
}

impl FreeSpace {
    pub const DEFAULT_RESOLUTION: f64 = 0.1;
    const BLOCKED: u32 = u32::MAX;

    pub fn build(scenario: &Scenario, clearance: f64, resolution: f64) -> Self {
        let cols = (scenario.extent.width() / resolution).floor().max(1.0) as usize;
        let rows = (scenario.extent.height() / resolution).floor().max(1.0) as usize;
        let origin = scenario.extent.min;
        let mut labels = vec![Self::BLOCKED; cols * rows];
        let center = |c: usize, r: usize| [origin[0] + (c as f64 + 0.5) * resolution, origin[1] + (r as f64 + 0.5) * resolution];
        let free: Vec<bool> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (c, r)))
            .map(|(c, r)| scenario.clearance(center(c, r)) >= clearance)
            .collect();
        let mut next = 0u32;
        let mut queue = VecDeque::new();
        for start in 0..labels.len() {
            if !free[start] || labels[start] != Self::BLOCKED {
                continue;
            }
            labels[start] = next;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                let (c, r) = (i % cols, i / cols);
                let mut visit = |j: usize| {
                    if free[j] && labels[j] == Self::BLOCKED {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                };
                if c > 0 {
                    visit(i - 1);
                }
                if c + 1 < cols {
                    visit(i + 1);
                }
                if r > 0 {
                    visit(i - cols);
                }
                if r + 1 < rows {
                    visit(i + cols);
                }
            }
            next += 1;
        }
        FreeSpace {
            origin,
            resolution,
            cols,
            rows,
            clearance,
            labels,
        }
    }

    pub fn component(&self, p: Vec2) -> Option<u32> {
        let c = ((p[0] - self.origin[0]) / self.resolution).floor();
        let r = ((p[1] - self.origin[1]) / self.resolution).floor();
        if c < 0.0 || r < 0.0 || c as usize >= self.cols || r as usize >= self.rows {
            return None;
        }
        let label = self.labels[r as usize * self.cols + c as usize];
        (label != Self::BLOCKED).then_some(label)
    }

    pub fn connected(&self, a: Vec2, b: Vec2) -> bool {
        matches!((self.component(a), self.component(b)), (Some(x), Some(y)) if x == y)
    }

    /// Rejection-samples a start pose and goal point that are both clear,
    /// mutually reachable and at least `min_distance` apart.
    pub fn sample_task(&self, scenario: &Scenario, min_distance: f64, rng: &mut impl Rng, max_samples: usize) -> Option<Task> {
        let ext = &scenario.extent;
        let point = |rng: &mut dyn rand::RngCore| -> Option<Vec2> {
            let p = [rng.random_range(ext.min[0]..ext.max[0]), rng.random_range(ext.min[1]..ext.max[1])];
            (scenario.clearance(p) >= self.clearance && self.component(p).is_some()).then_some(p)
        };
        for _ in 0..max_samples {
            let Some(start) = point(rng) else { continue };
            let Some(goal) = point(rng) else { continue };
            if norm(sub(goal, start)) < min_distance || !self.connected(start, goal) {
                continue;
            }
            let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            return Some(Task { start, heading, goal });
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContactSource {
    Wall,
    Obstacle(usize),
}

/// Deepest contact of the inflated footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub source: ContactSource,
    /// `footprint_radius - signed_distance`, non-negative.
    pub penetration: f64,
    /// Unit vector pointing from the contact toward the robot centre.
    pub normal: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    pub hit: bool,
    pub contact: Option<Contact>,
}

/// True iff a disc of `footprint_radius` around the robot touches an
/// obstacle or a wall.
pub fn check_collision(scenario: &Scenario, state: &RobotState, footprint_radius: f64) -> Collision {
    debug_assert!(footprint_radius > 0.0);
    let p = state.position;
    let wall_d = scenario.extent.interior_clearance(p);
    let wall_n = scenario.extent.nearest_wall_normal(p);
    let mut best = (wall_d, ContactSource::Wall, [-wall_n[0], -wall_n[1]]);
    for (i, ob) in scenario.obstacles.iter().enumerate() {
        let d = ob.signed_distance(p);
        if d < best.0 {
            best = (d, ContactSource::Obstacle(i), ob.outward_normal(p));
        }
    }
    let (d, source, normal) = best;
    if d <= footprint_radius {
        Collision {
            hit: true,
            contact: Some(Contact {
                source,
                penetration: footprint_radius - d,
                normal,
            }),
        }
    } else {
        Collision { hit: false, contact: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario(Difficulty::Easy, 1).unwrap();
        let b = generate_scenario(Difficulty::Easy, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.obstacles.len(), 6);
    }

    #[test]
    fn harder_tiers_have_more_obstacles() {
        let easy = generate_scenario(Difficulty::Easy, 7).unwrap();
        let medium = generate_scenario(Difficulty::Medium, 7).unwrap();
        let hard = generate_scenario(Difficulty::Hard, 7).unwrap();
        assert!(hard.obstacles.len() > medium.obstacles.len());
        assert!(medium.obstacles.len() > easy.obstacles.len());
    }

    #[test]
    fn generated_tasks_respect_constraints() {
        let spec = ScenarioSpec::default();
        for seed in 0..20 {
            for d in Difficulty::ALL {
                let s = generate_scenario(d, seed).unwrap();
                s.validate().unwrap();
                let t = s.task.unwrap();
                assert!(norm(sub(t.goal, t.start)) >= spec.min_start_goal_distance);
                assert!(s.clearance(t.start) >= spec.spawn_clearance);
                assert!(s.clearance(t.goal) >= spec.spawn_clearance);
            }
        }
    }

    #[test]
    fn impossible_spec_reports_failure() {
        let spec = ScenarioSpec {
            spawn_clearance: 6.0,
            max_attempts: 3,
            ..ScenarioSpec::default()
        };
        let err = generate_scenario_with(&spec, Difficulty::Easy, 5).unwrap_err();
        assert!(matches!(err, Error::Generation { attempts: 3, .. }));
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let s = generate_scenario(Difficulty::Medium, 3).unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);

        let bad = r#"{"extent":{"min":[0,0],"max":[1,1]},"obstacles":[{"shape":"circle","center":[0.5,0.5],"radius":-1}],"seed":0,"difficulty":"easy"}"#;
        assert!(Scenario::from_json(bad).is_err());
        let outside =
            r#"{"extent":{"min":[0,0],"max":[1,1]},"obstacles":[{"shape":"box","center":[0.9,0.5],"half_extents":[0.2,0.2]}],"seed":0,"difficulty":"easy"}"#;
        assert!(Scenario::from_json(outside).is_err());
    }

    #[test]
    fn collision_queries() {
        let s = Scenario::new(
            Rect::centered(10.0, 10.0),
            vec![
                Obstacle::Circle {
                    center: [2.0, 0.0],
                    radius: 0.5,
                },
                Obstacle::Box {
                    center: [-2.0, 0.0],
                    half_extents: [0.5, 0.5],
                },
            ],
            Difficulty::Easy,
            0,
        );
        // Nearest obstacle surface 1.5 m away.
        assert!(!check_collision(&s, &RobotState::at_rest([0.0, 0.0], 0.0), 0.3).hit);
        // Centre exactly on the circle boundary.
        let c = check_collision(&s, &RobotState::at_rest([1.5, 0.0], 0.0), 0.3);
        assert!(c.hit);
        let contact = c.contact.unwrap();
        assert_eq!(contact.source, ContactSource::Obstacle(0));
        assert!((contact.penetration - 0.3).abs() < 1e-12);
        assert_eq!(contact.normal, [-1.0, 0.0]);
        // 0.25 m from the box face.
        let c = check_collision(&s, &RobotState::at_rest([-1.25, 0.0], 0.0), 0.3);
        assert!(c.hit);
        assert!((c.contact.unwrap().penetration - 0.05).abs() < 1e-12);
        // Wall contact.
        let c = check_collision(&s, &RobotState::at_rest([4.8, 3.0], 0.0), 0.3);
        assert_eq!(c.contact.unwrap().source, ContactSource::Wall);
        assert_eq!(c.contact.unwrap().normal, [-1.0, 0.0]);
    }

    #[test]
    fn free_space_separates_walled_off_regions() {
        // A full-height wall splits the room.
        let s = Scenario::new(
            Rect::centered(10.0, 10.0),
            vec![Obstacle::Box {
                center: [0.0, 0.0],
                half_extents: [0.2, 5.0],
            }],
            Difficulty::Easy,
            0,
        );
        let free = FreeSpace::build(&s, 0.4, 0.1);
        assert!(!free.connected([-3.0, 0.0], [3.0, 0.0]));
        assert!(free.connected([-3.0, 0.0], [-3.0, 2.0]));
    }
}

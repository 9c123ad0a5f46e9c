//! Navigation environment: plant, sensors, goal-stay logic and ACSI resets.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::randomization::{noise, RandomizationDraw};
use super::reward::{compute_reward, front_clearance, RewardBreakdown, StepEvents, StuckTracker};
use crate::acsi::{on_collision, AcsiConfig, CurriculumState, ResetDecision, StateHistoryRing};
use crate::config::{Config, RandomizationConfig, WorldConfig};
use crate::error::Result;
use crate::policy::{HistoryBuffer, Observation};
use crate::world::{
    cast_lidar, check_collision, generate_scenario_with, step_dynamics, DynamicsParams, LidarScan, RobotState, Scenario, Task, Vec2, VelocityCommand,
};

/// Episode rules that differ between training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRules {
    pub footprint: f64,
    pub goal_radius: f64,
    pub goal_stay: f64,
    pub time_limit: f64,
}

impl EpisodeRules {
    pub fn training(world: &WorldConfig) -> Self {
        EpisodeRules {
            footprint: world.train_footprint,
            goal_radius: world.goal_radius,
            goal_stay: world.goal_stay,
            time_limit: world.episode_duration,
        }
    }

    pub fn evaluation(config: &Config) -> Self {
        EpisodeRules {
            footprint: config.eval.footprint,
            goal_radius: config.eval.goal_radius,
            goal_stay: config.eval.goal_stay,
            time_limit: config.eval.timeout,
        }
    }
}

/// Result of one policy tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: RewardBreakdown,
    pub collided: bool,
    pub success: bool,
    pub timeout: bool,
    pub goal_distance: f64,
    /// Frontal-cone clearance after the step (logged only).
    pub front_clearance: f64,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.collided || self.success || self.timeout
    }
}

/// A single robot in a single room.
#[derive(Debug, Clone)]
pub struct NavEnv {
    pub world: WorldConfig,
    pub rules: EpisodeRules,
    pub scenario: Scenario,
    pub goal: Vec2,
    pub state: RobotState,
    substeps_elapsed: u64,
    stay_ticks: u32,
    pub path_length: f64,
    pub draw: RandomizationDraw,
    dynamics: DynamicsParams,
    extero: VecDeque<(LidarScan, [f64; 2])>,
    history: HistoryBuffer,
    observation: Observation,
    observed_scan: LidarScan,
    stuck: StuckTracker,
    pub rng: ChaCha8Rng,
}

impl NavEnv {
    pub fn new(world: WorldConfig, rules: EpisodeRules, history_len: usize, scenario: Scenario, task: Task, rng: ChaCha8Rng) -> Self {
        let stuck = StuckTracker::new(world.stuck_window);
        let mut env = NavEnv {
            dynamics: DynamicsParams {
                tau_v: world.tau_v,
                ..DynamicsParams::default()
            },
            world,
            rules,
            goal: task.goal,
            state: task.start_state(),
            scenario,
            substeps_elapsed: 0,
            stay_ticks: 0,
            path_length: 0.0,
            draw: RandomizationDraw::nominal(),
            extero: VecDeque::new(),
            history: HistoryBuffer::new(history_len),
            observation: Observation::default(),
            observed_scan: LidarScan::uniform(0.0),
            stuck,
            rng,
        };
        env.begin_episode(task.start_state());
        env
    }

    /// Elapsed episode time (s).
    pub fn time(&self) -> f64 {
        self.substeps_elapsed as f64 * self.world.sim_dt
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.history
    }

    /// The (possibly delayed) scan the robot currently perceives.
    pub fn observed_scan(&self) -> &LidarScan {
        &self.observed_scan
    }

    pub fn goal_distance(&self) -> f64 {
        (self.goal[0] - self.state.position[0]).hypot(self.goal[1] - self.state.position[1])
    }

    /// Installs a randomization draw; takes effect from the next sensor read.
    pub fn apply_randomization(&mut self, draw: RandomizationDraw) {
        self.draw = draw;
        self.dynamics.tau_v = draw.scaled_tau(self.world.tau_v);
        self.extero.clear();
    }

    /// Starts a new episode in `scenario` from the task's start pose.
    pub fn reset_to(&mut self, scenario: Scenario, task: Task) {
        self.scenario = scenario;
        self.goal = task.goal;
        self.substeps_elapsed = 0;
        self.path_length = 0.0;
        self.begin_episode(task.start_state());
    }

    /// Restores a recorded state in the current room; the clock keeps running.
    pub fn replay(&mut self, state: RobotState) {
        self.begin_episode(state);
    }

    fn begin_episode(&mut self, state: RobotState) {
        self.state = state;
        self.stay_ticks = 0;
        self.stuck.clear();
        self.history.clear();
        self.extero.clear();
        self.refresh_observation();
    }

    fn refresh_observation(&mut self) {
        let scan = cast_lidar(&self.scenario, &self.state);
        let goal_body = self
            .state
            .to_body([self.goal[0] - self.state.position[0], self.goal[1] - self.state.position[1]]);
        let lag = self.draw.delay_ticks();
        if self.extero.is_empty() {
            for _ in 0..=lag {
                self.extero.push_back((scan, goal_body));
            }
        } else {
            self.extero.push_back((scan, goal_body));
        }
        while self.extero.len() > lag + 1 {
            self.extero.pop_front();
        }
        let (seen_scan, seen_goal) = *self.extero.front().expect("queue is non-empty");
        let d = self.draw;
        let rng = &mut self.rng;
        let [vx, vy, wz] = self.state.velocity;
        let lin = [vx + noise(rng, d.lin_vel_noise), vy + noise(rng, d.lin_vel_noise), noise(rng, d.lin_vel_noise)];
        let ang = [noise(rng, d.ang_vel_noise), noise(rng, d.ang_vel_noise), wz + noise(rng, d.ang_vel_noise)];
        let grav = [noise(rng, d.gravity_noise), noise(rng, d.gravity_noise), -1.0 + noise(rng, d.gravity_noise)];
        self.observation = Observation::new(lin, ang, grav, seen_goal, &seen_scan);
        self.observed_scan = seen_scan;
    }

    fn stay_ticks_required(&self) -> u32 {
        (self.rules.goal_stay / self.world.policy_dt() - 1e-9).ceil().max(1.0) as u32
    }

    /// Advances one policy tick under `command`, saturated at the hardware
    /// bounds. Sub-stepping stops at the first contact.
    pub fn step(&mut self, command: VelocityCommand) -> StepOutcome {
        let cmd = command.clamp(self.world.u_min, self.world.u_max);
        let mut collided = false;
        for _ in 0..self.world.substeps {
            let next = step_dynamics(&self.state, cmd, self.world.sim_dt, &self.dynamics);
            self.path_length += (next.position[0] - self.state.position[0]).hypot(next.position[1] - self.state.position[1]);
            self.state = next;
            self.substeps_elapsed += 1;
            if check_collision(&self.scenario, &self.state, self.rules.footprint).hit {
                collided = true;
                break;
            }
        }
        let d = self.goal_distance();
        if d < self.rules.goal_radius {
            self.stay_ticks += 1;
        } else {
            self.stay_ticks = 0;
        }
        let success = !collided && self.stay_ticks >= self.stay_ticks_required();
        let timeout = !collided && !success && self.time() >= self.rules.time_limit - 1e-9;
        self.stuck.push(self.state.position);
        let true_scan = cast_lidar(&self.scenario, &self.state);
        let events = StepEvents {
            terminated: collided,
            collided,
        };
        let reward = compute_reward(&self.state, &true_scan, self.goal, &self.stuck, events);
        self.history.push(&self.observation);
        self.refresh_observation();
        StepOutcome {
            reward,
            collided,
            success,
            timeout,
            goal_distance: d,
            front_clearance: front_clearance(&true_scan, self.world.front_cone),
        }
    }
}

/// Counters accumulated by a training environment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnvCounters {
    pub replays: u64,
    pub full_resets: u64,
    pub successes: u64,
    pub collisions: u64,
    pub timeouts: u64,
}

impl EnvCounters {
    pub fn add(&mut self, o: &EnvCounters) {
        self.replays += o.replays;
        self.full_resets += o.full_resets;
        self.successes += o.successes;
        self.collisions += o.collisions;
        self.timeouts += o.timeouts;
    }

    /// Every episode ends in a full reset.
    pub fn episodes(&self) -> u64 {
        self.full_resets
    }
}

/// Training wrapper: procedural rooms, randomization and ACSI resets.
#[derive(Debug, Clone)]
pub struct TrainEnv {
    pub env: NavEnv,
    pub ring: StateHistoryRing,
    pub curriculum: CurriculumState,
    pub counters: EnvCounters,
    /// Observation and flattened history just before the last truncation
    /// reset, kept for value bootstrapping.
    pub truncated_inputs: Option<(Observation, Vec<f64>)>,
    acsi: AcsiConfig,
    randomization: RandomizationConfig,
}

/// What the wrapper did after a tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStep {
    pub outcome: StepOutcome,
    pub replayed: bool,
    pub reset: bool,
    /// Ended by goal-stay success or the time cap rather than a failure.
    pub truncated: bool,
}

impl TrainStep {
    /// The transition ends a trajectory segment for advantage estimation.
    pub fn done(&self) -> bool {
        self.outcome.done()
    }
}

fn sample_room(world: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<(Scenario, Task)> {
    let mut last = None;
    for _ in 0..16 {
        match generate_scenario_with(&world.scenario, world.difficulty, rng.random()) {
            Ok(s) => {
                let task = s.task.expect("generated scenarios carry a task");
                return Ok((s, task));
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

impl TrainEnv {
    pub fn new(config: &Config, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scenario, task) = sample_room(&config.world, &mut rng)?;
        let env = NavEnv::new(
            config.world.clone(),
            EpisodeRules::training(&config.world),
            config.net.history_len,
            scenario,
            task,
            rng,
        );
        let curriculum = if config.ablation.no_acsi {
            CurriculumState::disabled()
        } else {
            CurriculumState::new(&config.acsi)
        };
        let mut te = TrainEnv {
            env,
            ring: StateHistoryRing::new(config.acsi.t_hist, config.world.policy_dt()),
            curriculum,
            counters: EnvCounters::default(),
            truncated_inputs: None,
            acsi: config.acsi,
            randomization: config.randomization.clone(),
        };
        let draw = RandomizationDraw::sample(&te.randomization, &mut te.env.rng);
        te.env.apply_randomization(draw);
        te.env.replay(te.env.state);
        te.ring.record_state(te.env.state, te.env.time());
        Ok(te)
    }

    fn full_reset(&mut self) -> Result<()> {
        let (scenario, task) = sample_room(&self.env.world, &mut self.env.rng)?;
        let draw = RandomizationDraw::sample(&self.randomization, &mut self.env.rng);
        self.env.apply_randomization(draw);
        self.env.reset_to(scenario, task);
        self.ring.clear();
        self.ring.record_state(self.env.state, self.env.time());
        self.counters.full_resets += 1;
        Ok(())
    }

    pub fn step(&mut self, command: VelocityCommand) -> Result<TrainStep> {
        let outcome = self.env.step(command);
        let mut replayed = false;
        let mut reset = false;
        let mut truncated = false;
        self.truncated_inputs = None;
        if outcome.collided {
            self.counters.collisions += 1;
            let now = self.env.time();
            match on_collision(&self.ring, &self.curriculum, now, self.acsi.t_back, &mut self.env.rng) {
                ResetDecision::ReplayCritical { state, .. } => {
                    self.env.replay(state);
                    self.ring.clear();
                    self.ring.record_state(state, now);
                    self.counters.replays += 1;
                    replayed = true;
                }
                ResetDecision::FullReset => {
                    self.curriculum.update(outcome.goal_distance, self.acsi.step_increment);
                    self.full_reset()?;
                    reset = true;
                }
            }
        } else if outcome.success || outcome.timeout {
            if outcome.success {
                self.counters.successes += 1;
            } else {
                self.counters.timeouts += 1;
            }
            self.curriculum.update(outcome.goal_distance, self.acsi.step_increment);
            self.truncated_inputs = Some((*self.env.observation(), self.env.history().flatten()));
            self.full_reset()?;
            reset = true;
            truncated = true;
        } else {
            self.ring.record_state(self.env.state, self.env.time());
        }
        Ok(TrainStep {
            outcome,
            replayed,
            reset,
            truncated,
        })
    }
}

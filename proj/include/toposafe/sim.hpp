#pragma once

// Crossing-scenario simulator: disc robots shuttle between opposing waypoints
// on the x and y axes using a simplified human-like reactive behavior.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "toposafe/core.hpp"

namespace toposafe::sim {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

struct BehaviorParams {
	double v_opt = 0.12;  // m/s
	double tau_rot = 0.5; // s
	double sigma = 0.05;  // safety margin, m
	double eta = 0.5;     // collision horizon, s
	double tau = 0.5;     // motion relaxation, s
};

struct Interval {
	double lo = 0.0;
	double hi = 0.0;
};

struct ParamRanges {
	Interval v_opt{0.12, 0.12};
	Interval tau_rot{0.5, 0.5};
	Interval sigma{0.0, 0.1};
	Interval eta{0.0, 1.0};
	Interval tau{0.0, 1.0};
};

// Knobs of the reactive behavior that have no published value.
struct BehaviorTuning {
	int candidate_headings = 36;
	double horizon = 1.0; // m, look-ahead distance of the free-space scan
};

struct ScenarioConfig {
	double side = 2.0;
	int n_robots = 20;
	double robot_radius = 0.04;
	int n_steps = 2000;
	double dt = 0.1;
	std::uint64_t seed = 0;
	double arrival_tolerance = 0.1;   // m
	double deadlock_window = 5.0;     // s
	double deadlock_speed_frac = 0.1; // of v_opt
	BehaviorTuning tuning{};

	double arrival_tol() const { return arrival_tolerance; }

	void validate() const {
		if (!(side > 0.0)) throw ConfigError("scenario.side must be > 0");
		if (n_robots < 1) throw ConfigError("scenario.n_robots must be >= 1");
		if (!(robot_radius >= 0.0)) throw ConfigError("scenario.robot_radius must be >= 0");
		if (n_steps < 1) throw ConfigError("scenario.n_steps must be >= 1");
		if (!(arrival_tolerance >= 0.0)) throw ConfigError("scenario.arrival_tolerance must be >= 0");
		if (!(dt > 0.0)) throw ConfigError("scenario.dt must be > 0");
		if (!(deadlock_window > 0.0)) throw ConfigError("scenario.deadlock_window must be > 0");
		if (!(deadlock_speed_frac > 0.0 && deadlock_speed_frac < 1.0))
			throw ConfigError("scenario.deadlock_speed_frac must be in (0,1)");
		if (tuning.candidate_headings < 1) throw ConfigError("candidate_headings must be >= 1");
		if (!(tuning.horizon > 0.0)) throw ConfigError("horizon must be > 0");
	}
};

// Waypoint indices: 0 = (-s/2, 0), 1 = (s/2, 0), 2 = (0, -s/2), 3 = (0, s/2).
// A robot shuttles between w and w ^ 1.
inline Point2 waypoint(const ScenarioConfig& cfg, int index) {
	const double h = cfg.side / 2.0;
	switch (index) {
	case 0: return {-h, 0.0};
	case 1: return {h, 0.0};
	case 2: return {0.0, -h};
	case 3: return {0.0, h};
	default: throw std::out_of_range("waypoint index");
	}
}

struct RobotState {
	double x = 0.0, y = 0.0;
	double heading = 0.0; // [-pi, pi)
	double vx = 0.0, vy = 0.0;
	double omega = 0.0;
	int current_waypoint = 1;

	Point2 position() const { return {x, y}; }
	double speed() const { return std::hypot(vx, vy); }
};

struct Command {
	double vx = 0.0, vy = 0.0, omega = 0.0;
};

struct SimulationTrace {
	std::vector<PointCloud> positions;  // n_steps clouds of n_robots points
	std::vector<PointCloud> velocities; // same shape, (vx, vy)
	std::vector<std::vector<int>> waypoints;
	int collision_count = 0;
	int deadlock_count = 0;
	BehaviorParams params;
	ScenarioConfig config;
};

inline double wrap_angle(double a) {
	double w = std::remainder(a, two_pi);
	if (w >= std::numbers::pi) w -= two_pi;
	return w;
}

// Uniform double in [0, 1) from the top 53 bits; stable across standard libraries.
inline double unit_uniform(std::mt19937_64& rng) {
	return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(const Interval& iv, std::mt19937_64& rng) {
	if (iv.lo == iv.hi) return iv.lo;
	return iv.lo + (iv.hi - iv.lo) * unit_uniform(rng);
}

inline BehaviorParams sample_params(const ParamRanges& ranges, std::mt19937_64& rng) {
	const std::array<std::pair<const char*, const Interval*>, 5> fields{{
		{"v_opt", &ranges.v_opt},
		{"tau_rot", &ranges.tau_rot},
		{"sigma", &ranges.sigma},
		{"eta", &ranges.eta},
		{"tau", &ranges.tau},
	}};
	for (const auto& [name, iv] : fields) {
		if (!(iv->lo <= iv->hi)) throw ConfigError(std::string("invalid interval for ") + name + ": lower > upper");
		if (iv->lo < 0.0) throw ConfigError(std::string("negative lower bound for ") + name);
	}
	BehaviorParams p;
	p.v_opt = uniform_in(ranges.v_opt, rng);
	p.tau_rot = uniform_in(ranges.tau_rot, rng);
	p.sigma = uniform_in(ranges.sigma, rng);
	p.eta = uniform_in(ranges.eta, rng);
	p.tau = uniform_in(ranges.tau, rng);
	return p;
}

namespace detail {

struct NeighborView {
	double dx, dy; // neighbor minus self
	double vx, vy;
};

// Time until the neighbor enters the disc of radius keep_out around self,
// given the neighbor's velocity relative to self. Infinity if never; zero if
// already inside and still closing.
inline double time_to_contact(double dx, double dy, double ux, double uy, double keep_out) {
	constexpr double never = std::numeric_limits<double>::infinity();
	const double du = dx * ux + dy * uy;
	if (du >= 0.0) return never; // separating
	const double dd = dx * dx + dy * dy;
	const double r2 = keep_out * keep_out;
	if (dd <= r2) return 0.0;
	const double uu = ux * ux + uy * uy;
	const double disc = du * du - uu * (dd - r2);
	if (disc < 0.0) return never;
	return (dd - r2) / (-du + std::sqrt(disc));
}

} // namespace detail

// Free distance a robot moving at v_opt along (ex, ey) covers before some
// neighbor, assumed to keep its velocity, breaches 2 * radius + sigma.
inline double free_distance(std::span<const detail::NeighborView> near, double ex, double ey,
                            const BehaviorParams& params, double keep_out, double horizon) {
	double t_min = std::numeric_limits<double>::infinity();
	for (const auto& n : near) {
		const double ux = n.vx - params.v_opt * ex;
		const double uy = n.vy - params.v_opt * ey;
		t_min = std::min(t_min, detail::time_to_contact(n.dx, n.dy, ux, uy, keep_out));
	}
	return std::min(horizon, params.v_opt * t_min);
}

// One control update in three stages: pick the candidate heading whose free
// segment passes closest to the waypoint, set a speed that leaves
// eta seconds to the first predicted contact, then relax speed (tau) and
// heading (tau_rot) from the current state.
inline Command step_behavior(const RobotState& self, std::span<const RobotState> neighbors,
                             const BehaviorParams& params, const ScenarioConfig& cfg) {
	const Point2 target = waypoint(cfg, self.current_waypoint);
	const double to_x = target.x - self.x;
	const double to_y = target.y - self.y;
	const double bearing = std::atan2(to_y, to_x);
	const double target_dist = std::hypot(to_x, to_y);
	const double horizon = cfg.tuning.horizon;
	const double keep_out = 2.0 * cfg.robot_radius + params.sigma;

	std::vector<detail::NeighborView> near;
	near.reserve(neighbors.size());
	const double travel_time = params.v_opt > 0.0 ? horizon / params.v_opt : 0.0;
	for (const auto& n : neighbors) {
		const double dx = n.x - self.x;
		const double dy = n.y - self.y;
		const double reach = keep_out + horizon + n.speed() * travel_time;
		if (dx * dx + dy * dy < reach * reach) near.push_back({dx, dy, n.vx, n.vy});
	}

	const int k_count = cfg.tuning.candidate_headings;
	const double step_angle = two_pi / k_count;
	// Near-equal scores are ordered by |offset|, then by turn from the current
	// heading, then by world x-direction: all unchanged by reflecting the
	// scene, so mirrored scenes pick mirrored headings. The tolerances keep
	// rounding noise from deciding ties.
	struct Candidate {
		double score;
		int abs_m;
		double turn;
		double ex;
	};
	const double score_tol = 1e-12 * (1.0 + target_dist * target_dist);
	constexpr double angle_tol = 1e-9;
	auto better = [&](const Candidate& a, const Candidate& b) {
		if (a.score < b.score - score_tol) return true;
		if (a.score > b.score + score_tol) return false;
		if (a.abs_m != b.abs_m) return a.abs_m < b.abs_m;
		if (std::abs(a.turn - b.turn) > angle_tol) return a.turn < b.turn;
		if (std::abs(a.ex - b.ex) > angle_tol) return a.ex > b.ex;
		return false;
	};
	Candidate best{std::numeric_limits<double>::infinity(), 0, 0.0, 0.0};
	double best_dir = bearing;
	double best_free = 0.0;
	for (int k = 0; k < k_count; ++k) {
		const int m = (2 * k <= k_count) ? k : k - k_count;
		const double offset = m * step_angle;
		const double dir = bearing + offset;
		const double ex = std::cos(dir);
		const double ey = std::sin(dir);
		const double free = free_distance(near, ex, ey, params, keep_out, horizon);
		// Closest approach to the waypoint along the free segment.
		const double travel = std::clamp(target_dist * std::cos(offset), 0.0, free);
		const double score = target_dist * target_dist + travel * travel - 2.0 * target_dist * travel * std::cos(offset);
		const Candidate c{score, std::abs(m), std::abs(wrap_angle(dir - self.heading)), ex};
		if (k == 0 || better(c, best)) {
			best = c;
			best_dir = dir;
			best_free = free;
		}
	}

	double desired_speed = params.v_opt;
	if (params.eta > 0.0) desired_speed = std::min(params.v_opt, best_free / params.eta);
	else if (best_free <= 0.0) desired_speed = 0.0;

	const double speed_gain = params.tau > 0.0 ? std::min(1.0, cfg.dt / params.tau) : 1.0;
	const double turn_gain = params.tau_rot > 0.0 ? std::min(1.0, cfg.dt / params.tau_rot) : 1.0;
	const double heading_error = desired_speed > 0.0 ? wrap_angle(best_dir - self.heading) : 0.0;
	// Robots drive along their heading, so slow down while still turning.
	desired_speed *= std::max(0.0, std::cos(heading_error));
	const double speed = self.speed() + (desired_speed - self.speed()) * speed_gain;
	const double turn = heading_error * turn_gain;
	const double heading = wrap_angle(self.heading + turn);

	Command cmd;
	cmd.vx = speed * std::cos(heading);
	cmd.vy = speed * std::sin(heading);
	cmd.omega = turn / cfg.dt;
	return cmd;
}

// Pairs (i, j), i < j, whose centers are closer than 2 * robot_radius.
inline std::vector<std::pair<int, int>> detect_collisions(std::span<const Point2> cloud, double robot_radius) {
	std::vector<std::pair<int, int>> pairs;
	const double contact = 2.0 * robot_radius;
	for (std::size_t i = 0; i < cloud.size(); ++i)
		for (std::size_t j = i + 1; j < cloud.size(); ++j)
			if (distance(cloud[i], cloud[j]) < contact) pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
	return pairs;
}

struct DeadlockSettings {
	double window = 5.0;
	double speed_frac = 0.1;
	double arrival_tolerance = 0.04;
};

// Number of robots that at some point moved less than speed_frac * v_opt * window
// over a full window while holding the same, unreached waypoint.
inline int detect_deadlocks(std::span<const PointCloud> positions, std::span<const std::vector<int>> waypoints,
                            const ScenarioConfig& cfg, double v_opt, const DeadlockSettings& s) {
	if (!(s.window > 0.0)) throw ConfigError("deadlock window must be > 0");
	if (!(s.speed_frac > 0.0 && s.speed_frac < 1.0)) throw ConfigError("deadlock speed_frac must be in (0,1)");
	if (positions.size() != waypoints.size()) throw std::invalid_argument("positions/waypoints length mismatch");
	const auto steps = static_cast<std::ptrdiff_t>(positions.size());
	const auto w = static_cast<std::ptrdiff_t>(std::llround(s.window / cfg.dt));
	if (steps == 0 || w < 1 || w >= steps) return 0;
	const double threshold = s.speed_frac * v_opt * s.window;
	const std::size_t n = positions.front().size();
	int count = 0;
	for (std::size_t r = 0; r < n; ++r) {
		std::ptrdiff_t last_switch = 0;
		for (std::ptrdiff_t t = 1; t < steps; ++t) {
			if (waypoints[t][r] != waypoints[t - 1][r]) last_switch = t;
			if (t - w < last_switch) continue;
			const Point2 goal = waypoint(cfg, waypoints[t][r]);
			if (distance(positions[t][r], goal) <= s.arrival_tolerance) continue;
			if (distance(positions[t][r], positions[t - w][r]) < threshold) {
				++count;
				break;
			}
		}
	}
	return count;
}

// Uniform non-overlapping placement; even robots use the horizontal waypoint
// pair, odd robots the vertical one, each heading for the farther end.
inline std::vector<RobotState> spawn_robots(const ScenarioConfig& cfg, std::mt19937_64& rng) {
	std::vector<RobotState> robots;
	const double h = cfg.side / 2.0;
	const double min_gap = 2.0 * cfg.robot_radius;
	constexpr int max_attempts = 100000;
	for (int i = 0; i < cfg.n_robots; ++i) {
		RobotState r;
		int attempt = 0;
		for (;; ++attempt) {
			if (attempt == max_attempts) throw ConfigError("could not place robots without overlap; enlarge scenario.side");
			r.x = -h + cfg.side * unit_uniform(rng);
			r.y = -h + cfg.side * unit_uniform(rng);
			bool clear = true;
			for (const auto& o : robots)
				if (std::hypot(o.x - r.x, o.y - r.y) < min_gap) {
					clear = false;
					break;
				}
			if (clear) break;
		}
		const int base = (i % 2 == 0) ? 0 : 2;
		const double d0 = distance(r.position(), waypoint(cfg, base));
		const double d1 = distance(r.position(), waypoint(cfg, base + 1));
		r.current_waypoint = d0 > d1 ? base : base + 1;
		const Point2 goal = waypoint(cfg, r.current_waypoint);
		r.heading = wrap_angle(std::atan2(goal.y - r.y, goal.x - r.x));
		robots.push_back(r);
	}
	return robots;
}

inline SimulationTrace run_simulation(const ScenarioConfig& cfg, const BehaviorParams& params,
                                      std::vector<RobotState> robots) {
	cfg.validate();
	SimulationTrace trace;
	trace.params = params;
	trace.config = cfg;
	const std::size_t n = robots.size();
	trace.positions.reserve(cfg.n_steps);
	trace.velocities.reserve(cfg.n_steps);
	trace.waypoints.reserve(cfg.n_steps);

	std::vector<char> in_contact(n * n, 0);
	auto record = [&] {
		PointCloud pos(n), vel(n);
		std::vector<int> wp(n);
		for (std::size_t i = 0; i < n; ++i) {
			pos[i] = robots[i].position();
			vel[i] = {robots[i].vx, robots[i].vy};
			wp[i] = robots[i].current_waypoint;
		}
		std::vector<char> now(n * n, 0);
		for (auto [i, j] : detect_collisions(pos, cfg.robot_radius)) {
			now[i * n + j] = 1;
			if (!in_contact[i * n + j]) ++trace.collision_count;
		}
		in_contact.swap(now);
		trace.positions.push_back(std::move(pos));
		trace.velocities.push_back(std::move(vel));
		trace.waypoints.push_back(std::move(wp));
	};

	record();
	std::vector<RobotState> others;
	others.reserve(n);
	std::vector<Command> commands(n);
	for (int step = 1; step < cfg.n_steps; ++step) {
		for (std::size_t i = 0; i < n; ++i) {
			others.clear();
			for (std::size_t j = 0; j < n; ++j)
				if (j != i) others.push_back(robots[j]);
			commands[i] = step_behavior(robots[i], others, params, cfg);
		}
		for (std::size_t i = 0; i < n; ++i) {
			auto& r = robots[i];
			r.vx = commands[i].vx;
			r.vy = commands[i].vy;
			r.omega = commands[i].omega;
			r.heading = wrap_angle(r.heading + r.omega * cfg.dt);
			r.x += r.vx * cfg.dt;
			r.y += r.vy * cfg.dt;
			if (distance(r.position(), waypoint(cfg, r.current_waypoint)) <= cfg.arrival_tol())
				r.current_waypoint ^= 1;
		}
		record();
	}
	trace.deadlock_count = detect_deadlocks(trace.positions, trace.waypoints, cfg, params.v_opt,
	                                        {cfg.deadlock_window, cfg.deadlock_speed_frac, cfg.arrival_tol()});
	return trace;
}

inline SimulationTrace run_simulation(const ScenarioConfig& cfg, const BehaviorParams& params) {
	cfg.validate();
	std::mt19937_64 rng(cfg.seed);
	return run_simulation(cfg, params, spawn_robots(cfg, rng));
}

// --- persistence -----------------------------------------------------------

inline nlohmann::json to_json(const BehaviorParams& p) {
	return {{"v_opt", p.v_opt}, {"tau_rot", p.tau_rot}, {"sigma", p.sigma}, {"eta", p.eta}, {"tau", p.tau}};
}

inline BehaviorParams params_from_json(const nlohmann::json& j) {
	BehaviorParams p;
	p.v_opt = j.at("v_opt").get<double>();
	p.tau_rot = j.at("tau_rot").get<double>();
	p.sigma = j.at("sigma").get<double>();
	p.eta = j.at("eta").get<double>();
	p.tau = j.at("tau").get<double>();
	return p;
}

inline nlohmann::json to_json(const ScenarioConfig& c) {
	return {{"side", c.side},
	        {"n_robots", c.n_robots},
	        {"robot_radius", c.robot_radius},
	        {"n_steps", c.n_steps},
	        {"dt", c.dt},
	        {"seed", c.seed},
	        {"arrival_tolerance", c.arrival_tol()},
	        {"deadlock_window", c.deadlock_window},
	        {"deadlock_speed_frac", c.deadlock_speed_frac},
	        {"candidate_headings", c.tuning.candidate_headings},
	        {"horizon", c.tuning.horizon}};
}

inline ScenarioConfig config_from_json(const nlohmann::json& j) {
	ScenarioConfig c;
	c.side = j.at("side").get<double>();
	c.n_robots = j.at("n_robots").get<int>();
	c.robot_radius = j.at("robot_radius").get<double>();
	c.n_steps = j.at("n_steps").get<int>();
	c.dt = j.at("dt").get<double>();
	c.seed = j.at("seed").get<std::uint64_t>();
	c.arrival_tolerance = j.at("arrival_tolerance").get<double>();
	c.deadlock_window = j.at("deadlock_window").get<double>();
	c.deadlock_speed_frac = j.at("deadlock_speed_frac").get<double>();
	c.tuning.candidate_headings = j.at("candidate_headings").get<int>();
	c.tuning.horizon = j.at("horizon").get<double>();
	return c;
}

// Writes <stem>.csv (step, robot_id, x, y) and <stem>.json (metadata).
inline void write_trace(const std::filesystem::path& stem, const SimulationTrace& trace, int run_id) {
	auto csv_path = stem;
	csv_path += ".csv";
	auto json_path = stem;
	json_path += ".json";
	{
		std::ofstream os(csv_path);
		if (!os) throw DataError("cannot write " + csv_path.string());
		os << "step,robot_id,x,y\n";
		for (std::size_t t = 0; t < trace.positions.size(); ++t)
			for (std::size_t r = 0; r < trace.positions[t].size(); ++r)
				os << t << ',' << r << ',' << format_double(trace.positions[t][r].x) << ','
				   << format_double(trace.positions[t][r].y) << '\n';
		if (!os) throw DataError("write failed for " + csv_path.string());
	}
	nlohmann::json meta = {{"run_id", run_id},
	                       {"params", to_json(trace.params)},
	                       {"config", to_json(trace.config)},
	                       {"collision_count", trace.collision_count},
	                       {"deadlock_count", trace.deadlock_count}};
	std::ofstream js(json_path);
	if (!js) throw DataError("cannot write " + json_path.string());
	js << meta.dump(2) << '\n';
	if (!js) throw DataError("write failed for " + json_path.string());
}

// Positions, counts, params and config of a stored trace. Velocities and
// waypoint history are not persisted.
inline SimulationTrace read_trace(const std::filesystem::path& stem) {
	auto csv_path = stem;
	csv_path += ".csv";
	auto json_path = stem;
	json_path += ".json";
	SimulationTrace trace;
	std::ifstream js(json_path);
	if (!js) throw DataError("missing trace metadata " + json_path.string());
	nlohmann::json meta;
	try {
		js >> meta;
		trace.params = params_from_json(meta.at("params"));
		trace.config = config_from_json(meta.at("config"));
		trace.collision_count = meta.at("collision_count").get<int>();
		trace.deadlock_count = meta.at("deadlock_count").get<int>();
	} catch (const nlohmann::json::exception& e) {
		throw DataError("corrupt trace metadata " + json_path.string() + ": " + e.what());
	}
	std::ifstream os(csv_path);
	if (!os) throw DataError("missing trace positions " + csv_path.string());
	std::string line;
	std::getline(os, line);
	if (line != "step,robot_id,x,y") throw DataError("bad trace header in " + csv_path.string());
	const auto n = static_cast<std::size_t>(trace.config.n_robots);
	while (std::getline(os, line)) {
		if (line.empty()) continue;
		auto cols = split_csv_line(line);
		if (cols.size() != 4) throw DataError("bad trace row in " + csv_path.string());
		const auto step = static_cast<std::size_t>(parse_int(cols[0]));
		const auto robot = static_cast<std::size_t>(parse_int(cols[1]));
		if (robot >= n) throw DataError("robot id out of range in " + csv_path.string());
		if (step == trace.positions.size()) trace.positions.emplace_back(n);
		if (step + 1 != trace.positions.size()) throw DataError("steps out of order in " + csv_path.string());
		trace.positions[step][robot] = {parse_double(cols[2]), parse_double(cols[3])};
	}
	if (trace.positions.size() != static_cast<std::size_t>(trace.config.n_steps))
		throw DataError("truncated trace " + csv_path.string());
	return trace;
}

} // namespace toposafe::sim

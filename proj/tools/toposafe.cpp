// toposafe: run the experiment pipeline stage by stage from one manifest.

#include <iostream>

#include <CLI11.hpp>

#include "toposafe/pipeline.hpp"

using namespace toposafe;

int main(int argc, char** argv) {
	CLI::App app{"Topological safety regions for multi-robot navigation"};
	app.require_subcommand(1);

	std::string manifest_path;
	pipeline::Overrides over;
	std::string out, method, event;
	double eps = 0.0;
	std::uint64_t seed = 0;

	auto add_common = [&](CLI::App* sub) {
		sub->add_option("--manifest", manifest_path, "Experiment manifest (INI)")->check(CLI::ExistingFile);
		sub->add_option("--out", out, "Output directory (overrides experiment.output_dir)");
		sub->add_option("--seed", seed, "Master seed (overrides experiment.master_seed)");
		sub->add_option("--event", event, "Restrict to one task")
			->check(CLI::IsMember({"collision", "deadlock", "compliant"}));
		sub->add_option("--eps", eps, "Target error level (overrides calibration.eps)");
		sub->add_option("--method", method, "Calibration method")->check(CLI::IsMember({"ps", "cp"}));
	};

	struct Stage {
		const char* name;
		const char* help;
		int (*run)(const pipeline::Manifest&, std::ostream&);
	};
	const Stage stages[] = {
		{"simulate", "Run the seeded simulation sweep and write traces plus index.csv", pipeline::simulate},
		{"featurize", "Build labeled datasets from stored traces", pipeline::featurize},
		{"train", "Fit the adjustable SVM on the training split", pipeline::train},
		{"calibrate", "Calibrate safety regions (PS and/or CP)", pipeline::calibrate_stage},
		{"rules", "Induce global rules and anchors around region boundaries", pipeline::rules_stage},
		{"report", "Assemble classifier, region and rule tables", pipeline::report},
	};
	std::vector<std::pair<CLI::App*, const Stage*>> subs;
	for (const auto& s : stages) {
		auto* sub = app.add_subcommand(s.name, s.help);
		add_common(sub);
		subs.emplace_back(sub, &s);
	}
	auto* defaults = app.add_subcommand("defaults", "Print a manifest with every default value");

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		const int rc = app.exit(e);
		return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
	}

	try {
		if (defaults->parsed()) {
			std::cout << pipeline::dump_manifest(pipeline::Manifest{});
			return 0;
		}
		for (const auto& [sub, stage] : subs) {
			if (!sub->parsed()) continue;
			auto m = manifest_path.empty() ? pipeline::Manifest{} : pipeline::load_manifest(manifest_path);
			if (sub->count("--out")) over.out = out;
			if (sub->count("--seed")) over.seed = seed;
			if (sub->count("--event")) over.event = event;
			if (sub->count("--eps")) over.eps = eps;
			if (sub->count("--method")) over.method = method;
			pipeline::apply(m, over);
			return stage->run(m, std::cerr);
		}
	} catch (const Error& e) {
		std::cerr << "error: " << e.what() << '\n';
		return static_cast<int>(e.code());
	} catch (const std::exception& e) {
		std::cerr << "error: " << e.what() << '\n';
		return static_cast<int>(ExitCode::data);
	}
	return 0;
}

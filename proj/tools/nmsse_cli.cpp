// Copyright 2026 The nmsse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// nmsse - run one experiment from a configuration file.
//
//   nmsse <experiment> --config <path> [--out <dir>] [--seed <u64>] [--trajectories <N>]

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "nmsse/config.hpp"
#include "nmsse/experiments.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Non-Markovian stochastic Schroedinger equation experiments"};
    std::string experiment;
    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trajectories;
    app.add_option("experiment", experiment, "Experiment to run")
        ->required()
        ->check(CLI::IsMember(nmsse::experiment_names()));
    app.add_option("--config", config_path, "Configuration file")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "Output directory (overrides output.directory)");
    app.add_option("--seed", seed, "Master seed override");
    app.add_option("--trajectories", trajectories, "Trajectory count override")->check(CLI::Range(2ul, SIZE_MAX));
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    nmsse::ExperimentConfig cfg;
    try {
        std::ifstream in(config_path);
        std::stringstream text;
        text << in.rdbuf();
        cfg = nmsse::parse_config(text.str());
    } catch (const std::exception& e) {
        std::cerr << config_path << ": " << e.what() << '\n';
        return 2;
    }
    if (seed) cfg.master_seed = *seed;
    if (trajectories) cfg.n_trajectories = *trajectories;
    if (out_dir) cfg.output_directory = *out_dir;

    const auto outcome = nmsse::run_experiment(cfg, experiment, cfg.output_directory);
    for (const auto& c : outcome.checks)
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " = " << c.value << (c.below ? " < " : " > ")
                  << c.threshold << '\n';
    for (const auto& f : outcome.files) std::cout << "wrote " << cfg.output_directory << '/' << f << '\n';
    return outcome.exit_code;
}

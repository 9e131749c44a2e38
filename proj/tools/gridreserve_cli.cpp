// gridreserve: microgrid dispatch and reserve-scheduling studies from the
// command line. Subcommands mirror the library: baseline | robust | chance |
// dro build-set | dro solve | verify radius | verify gain | simulate |
// pareto | modes.
//
// Exit codes: 0 success; 1 infeasible problem or failed validation;
// 2 input error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gridreserve/dispatch.hpp"
#include "gridreserve/dro.hpp"
#include "gridreserve/events.hpp"
#include "gridreserve/netmodel.hpp"
#include "gridreserve/robust.hpp"
#include "gridreserve/simharness.hpp"
#include "gridreserve/stochastic.hpp"

namespace fs = std::filesystem;
using namespace gridreserve;
using nlohmann::json;

namespace {

/// All reports are written atomically: temp file in the target directory,
/// then rename.
void write_atomic(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp.string() + "'");
        out << content;
    }
    fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_atomic(path, j.dump(2) + "\n"); }

struct CommonArgs {
    std::string case_path, events_path, samples_path, gauss_path, spec_path;
    std::string out_dir = "out";
    std::string format = "json";
    std::string method = "chance";
    double rho = 0.05;
    double alpha = 0.05;
    std::uint64_t seed = 42;
    int n = 20000;
    int threads = 0;
    bool lenient = false;
    bool dump_lp = false;
    std::string grid = "0.01,0.05,0.1,0.2";
    int dim = -1;
    std::string model = "linear";
};

std::vector<double> parse_grid(const std::string& grid) {
    std::vector<double> out;
    std::stringstream ss(grid);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    if (out.empty()) throw DomainError("grid must contain at least one value");
    return out;
}

void check_rho(double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw DomainError("rho must be in (0,1)");
}

void emit_solution(const CommonArgs& args, const netmodel::GridCase& c,
                   const dispatch::DispatchSolution& sol) {
    write_json(fs::path(args.out_dir) / "solution.json", dispatch::solution_to_json(c, sol));
    write_atomic(fs::path(args.out_dir) / "solution.csv", dispatch::solution_to_csv(c, sol));
}

void emit_schedule(const CommonArgs& args, const robust::RobustSolution& sol) {
    write_json(fs::path(args.out_dir) / "reserves.json",
               robust::schedule_to_json(sol.schedule));
}

void print_summary(const json& j, const CommonArgs& args) {
    if (args.format == "csv") return;  // csv callers read the files
    std::cout << j.dump() << "\n";
}

simharness::SweepInputs
load_sweep_inputs(const CommonArgs& args, const netmodel::GridCase& c,
                  std::optional<events::EventCatalog>& cat,
                  std::optional<events::ModeSchedule>& modes,
                  std::optional<robust::DisturbanceSpec>& spec,
                  std::optional<stochastic::GaussianModel>& gauss,
                  std::optional<dro::SampleSet>& samples) {
    simharness::SweepInputs in;
    if (args.events_path.empty()) throw DomainError("--events is required");
    cat = events::EventCatalog::load(args.events_path);
    cat->validate(c);
    modes = events::select_modes(*cat);
    in.catalog = &*cat;
    in.modes = &*modes;
    if (!args.spec_path.empty()) {
        spec = robust::DisturbanceSpec::load(args.spec_path);
        spec->validate(c);
        in.spec = &*spec;
    }
    if (!args.gauss_path.empty()) {
        gauss = stochastic::GaussianModel::load(args.gauss_path);
        in.gauss = &*gauss;
    }
    if (!args.samples_path.empty()) {
        samples = dro::SampleSet::load(args.samples_path);
        in.samples = &*samples;
    }
    return in;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gridreserve: resilient microgrid dispatch studies"};
    app.require_subcommand(1);
    CommonArgs args;

    app.add_option("--threads", args.threads,
                   "worker threads (0 = cores; env GRIDRESERVE_THREADS)");

    auto add_common = [&](CLI::App* cmd, bool needs_case = true) {
        if (needs_case)
            cmd->add_option("--case", args.case_path, "case file")->required();
        cmd->add_option("--out", args.out_dir, "output directory");
        cmd->add_option("--format", args.format, "json|csv")
            ->check(CLI::IsMember({"json", "csv"}));
        cmd->add_flag("--lenient", args.lenient, "tolerate unknown keys in inputs");
    };

    auto* cmd_base = app.add_subcommand("baseline", "solve the baseline dispatch");
    add_common(cmd_base);
    cmd_base->add_option("--model", args.model, "linear|socp")
        ->check(CLI::IsMember({"linear", "socp"}));
    cmd_base->add_flag("--dump-lp", args.dump_lp, "dump the conic program listing");

    auto* cmd_rob = app.add_subcommand("robust", "worst-case robust reserves");
    add_common(cmd_rob);
    cmd_rob->add_option("--spec", args.spec_path, "disturbance spec file")->required();

    auto* cmd_chance = app.add_subcommand("chance", "Gaussian chance-constrained reserves");
    add_common(cmd_chance);
    cmd_chance->add_option("--gauss", args.gauss_path, "gaussian model file")->required();
    cmd_chance->add_option("--alpha", args.alpha, "violation level");

    auto* cmd_dro = app.add_subcommand("dro", "Wasserstein DRO");
    auto* cmd_dro_build = cmd_dro->add_subcommand("build-set", "construct the ambiguity set");
    cmd_dro_build->add_option("--samples", args.samples_path, "sample file")->required();
    cmd_dro_build->add_option("--rho", args.rho, "violation level");
    cmd_dro_build->add_option("--out", args.out_dir, "output directory");
    auto* cmd_dro_solve = cmd_dro->add_subcommand("solve", "solve the DRO counterpart");
    add_common(cmd_dro_solve);
    cmd_dro_solve->add_option("--samples", args.samples_path, "sample file")->required();
    cmd_dro_solve->add_option("--spec", args.spec_path, "disturbance spec file")->required();
    cmd_dro_solve->add_option("--rho", args.rho, "violation level");

    auto* cmd_verify = app.add_subcommand("verify", "post-hoc resilience verification");
    auto* cmd_vr = cmd_verify->add_subcommand("radius", "feasibility radius");
    add_common(cmd_vr);
    cmd_vr->add_option("--spec", args.spec_path, "disturbance spec file")->required();
    auto* cmd_vg = cmd_verify->add_subcommand("gain", "reserve-gain tuning");
    add_common(cmd_vg);
    cmd_vg->add_option("--spec", args.spec_path, "disturbance spec file")->required();
    cmd_vg->add_option("--dim", args.dim, "single direction index (default: all)");

    auto* cmd_sim = app.add_subcommand("simulate", "Monte-Carlo validation");
    add_common(cmd_sim);
    cmd_sim->add_option("--events", args.events_path, "events file")->required();
    cmd_sim->add_option("--method", args.method, "robust|chance|dro|cvar")
        ->check(CLI::IsMember({"robust", "chance", "dro", "cvar"}));
    cmd_sim->add_option("--rho", args.rho, "risk level");
    cmd_sim->add_option("--n", args.n, "number of scenarios");
    cmd_sim->add_option("--seed", args.seed, "random seed");
    cmd_sim->add_option("--spec", args.spec_path, "disturbance spec (robust/dro)");
    cmd_sim->add_option("--gauss", args.gauss_path, "gaussian model (chance)");
    cmd_sim->add_option("--samples", args.samples_path, "sample file (dro/cvar)");

    auto* cmd_pareto = app.add_subcommand("pareto", "efficiency-resilience sweep");
    add_common(cmd_pareto);
    cmd_pareto->add_option("--events", args.events_path, "events file")->required();
    cmd_pareto->add_option("--method", args.method, "robust|chance|dro|cvar")
        ->check(CLI::IsMember({"robust", "chance", "dro", "cvar"}));
    cmd_pareto->add_option("--grid", args.grid, "comma-separated rho grid");
    cmd_pareto->add_option("--n", args.n, "scenarios per grid point");
    cmd_pareto->add_option("--seed", args.seed, "random seed");
    cmd_pareto->add_option("--spec", args.spec_path, "disturbance spec (robust/dro)");
    cmd_pareto->add_option("--gauss", args.gauss_path, "gaussian model (chance)");
    cmd_pareto->add_option("--samples", args.samples_path, "sample file (dro/cvar)");

    auto* cmd_modes = app.add_subcommand("modes", "mode selection from an events file");
    add_common(cmd_modes);
    cmd_modes->add_option("--events", args.events_path, "events file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cmd_base) {
            auto c = netmodel::load_case(args.case_path, args.lenient);
            auto model = args.model == "socp" ? powerflow::Model::Socp
                                              : powerflow::Model::Linear;
            if (args.dump_lp) {
                conic::ConicProgram prog;
                auto nv = powerflow::build_bfm(c, prog, model);
                auto dv = dispatch::build_baseline(c, prog, nv);
                dispatch::objective_baseline(c, prog, dv);
                std::ostringstream os;
                prog.write_listing(os);
                write_atomic(fs::path(args.out_dir) / "program.lp", os.str());
            }
            auto sol = dispatch::solve_baseline(c, model);
            emit_solution(args, c, sol);
            print_summary({{"status", "ok"}, {"objective", sol.objective}}, args);
        } else if (*cmd_rob) {
            auto c = netmodel::load_case(args.case_path, args.lenient);
            auto spec = robust::DisturbanceSpec::load(args.spec_path);
            spec.validate(c);
            auto sol = robust::solve_robust(c, spec);
            emit_solution(args, c, sol.base);
            emit_schedule(args, sol);
            print_summary({{"status", "ok"},
                           {"objective", sol.base.objective},
                           {"vertices", sol.vertices},
                           {"total_reserves_pu", sol.schedule.total()}},
                          args);
        } else if (*cmd_chance) {
            if (!(args.alpha > 0.0 && args.alpha < 0.5))
                throw DomainError("alpha must be in (0,0.5)");
            auto c = netmodel::load_case(args.case_path, args.lenient);
            auto gauss = stochastic::GaussianModel::load(args.gauss_path);
            auto sol = stochastic::solve_chance(c, gauss, args.alpha);
            emit_solution(args, c, sol.base);
            emit_schedule(args, sol);
            print_summary({{"status", "ok"},
                           {"objective", sol.base.objective},
                           {"total_reserves_pu", sol.schedule.total()}},
                          args);
        } else if (*cmd_dro_build) {
            check_rho(args.rho);
            auto samples = dro::SampleSet::load(args.samples_path);
            auto set = dro::build_ambiguity_set(samples, args.rho);
            write_json(fs::path(args.out_dir) / "ambiguity.json", set.to_json());
            print_summary({{"status", "ok"},
                           {"C", set.C},
                           {"epsilon", set.epsilon},
                           {"sigma", set.sigma}},
                          args);
        } else if (*cmd_dro_solve) {
            check_rho(args.rho);
            auto c = netmodel::load_case(args.case_path, args.lenient);
            auto samples = dro::SampleSet::load(args.samples_path);
            auto spec = robust::DisturbanceSpec::load(args.spec_path);
            spec.validate(c);
            auto set = dro::build_ambiguity_set(samples, args.rho);
            auto sol = dro::solve_dro(c, spec, set);
            write_json(fs::path(args.out_dir) / "ambiguity.json", set.to_json());
            emit_solution(args, c, sol.base);
            emit_schedule(args, sol);
            print_summary({{"status", "ok"},
                           {"objective", sol.base.objective},
                           {"sigma", set.sigma},
                           {"vertices", sol.vertices}},
                          args);
        } else if (*cmd_vr) {
            auto c = netmodel::load_case(args.case_path, args.lenient);
            auto spec = robust::DisturbanceSpec::load(args.spec_path);
            spec.validate(c);
            auto sol = dispatch::solve_baseline(c);
            auto rep = robust::feasibility_radius(c, spec, sol);
            write_json(fs::path(args.out_dir) / "radius.json",
                       robust::radius_report_to_json(rep));
            print_summary({{"status", "ok"}, {"radius", rep.ball_radius}}, args);
        } else if (*cmd_vg) {
            auto c = netmodel::load_case(args.case_path, args.lenient);
            auto spec = robust::DisturbanceSpec::load(args.spec_path);
            spec.validate(c);
            auto rsol = robust::solve_robust(c, spec);
            json dirs = json::array();
            for (size_t i = 0; i < spec.dims.size(); ++i) {
                if (args.dim >= 0 && static_cast<size_t>(args.dim) != i) continue;
                for (double sign : {+1.0, -1.0}) {
                    auto t = robust::tune_reserve_gain(c, spec, rsol, i, sign);
                    dirs.push_back({{"dim", i},
                                    {"sign", sign},
                                    {"alpha", t.alpha},
                                    {"w_star", t.w_star},
                                    {"gain_max_abs",
                                     t.gain.size() ? t.gain.cwiseAbs().maxCoeff() : 0.0}});
                }
            }
            json out = {{"directions", dirs}};
            write_json(fs::path(args.out_dir) / "gain.json", out);
            print_summary({{"status", "ok"}, {"directions", dirs.size()}}, args);
        } else if (*cmd_sim) {
            check_rho(args.rho);
            auto c = netmodel::load_case(args.case_path, args.lenient);
            std::optional<events::EventCatalog> cat;
            std::optional<events::ModeSchedule> modes;
            std::optional<robust::DisturbanceSpec> spec;
            std::optional<stochastic::GaussianModel> gauss;
            std::optional<dro::SampleSet> samples;
            auto in = load_sweep_inputs(args, c, cat, modes, spec, gauss, samples);
            auto method = simharness::method_from(args.method);
            auto sol = simharness::solve_method(c, method, args.rho, in);
            auto rep = simharness::validate(c, sol.base, sol.schedule, *cat, *modes,
                                            args.n, args.seed, args.rho, args.threads);
            write_json(fs::path(args.out_dir) / "report.json",
                       simharness::report_to_json(rep));
            write_atomic(fs::path(args.out_dir) / "report.csv",
                         simharness::report_to_csv(rep));
            print_summary({{"status", rep.pass ? "pass" : "fail"},
                           {"violation_probability", rep.violation_probability},
                           {"objective", sol.base.objective}},
                          args);
            return rep.pass ? 0 : 1;
        } else if (*cmd_pareto) {
            auto c = netmodel::load_case(args.case_path, args.lenient);
            std::optional<events::EventCatalog> cat;
            std::optional<events::ModeSchedule> modes;
            std::optional<robust::DisturbanceSpec> spec;
            std::optional<stochastic::GaussianModel> gauss;
            std::optional<dro::SampleSet> samples;
            auto in = load_sweep_inputs(args, c, cat, modes, spec, gauss, samples);
            auto method = simharness::method_from(args.method);
            auto points = simharness::pareto_sweep(c, method, parse_grid(args.grid),
                                                   args.n, args.seed, in, args.threads);
            write_atomic(fs::path(args.out_dir) / "pareto.csv",
                         simharness::pareto_to_csv(points));
            write_json(fs::path(args.out_dir) / "pareto.json",
                       simharness::pareto_to_json(points));
            int failed = 0;
            for (const auto& p : points)
                if (!p.ok()) ++failed;
            print_summary({{"status", failed == 0 ? "ok" : "partial"},
                           {"points", points.size()},
                           {"failed", failed}},
                          args);
            return failed == static_cast<int>(points.size()) && failed > 0 ? 1 : 0;
        } else if (*cmd_modes) {
            auto c = netmodel::load_case(args.case_path, args.lenient);
            auto cat = events::EventCatalog::load(args.events_path);
            cat.validate(c);
            auto sched = events::select_modes(cat);
            write_json(fs::path(args.out_dir) / "modes.json",
                       events::mode_schedule_to_json(sched));
            print_summary({{"status", "ok"}, {"windows", sched.windows.size()}}, args);
        }
        return 0;
    } catch (const InfeasibleCase& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 1;
    } catch (const InfeasibleRobust& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 1;
    } catch (const NoFeasibleSigma& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

#include "modalmeta/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "modalmeta/checkpoint.hpp"
#include "modalmeta/eval.hpp"
#include "modalmeta/gradcheck.hpp"
#include "modalmeta/networks.hpp"

namespace modalmeta {
namespace {

namespace fs = std::filesystem;

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory \"" + dir + "\"");
}

struct Options {
    std::string config_path;
    std::string checkpoint_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t tasks = 0;
    bool tasks_set = false;
    bool corrupt = false;
};

int do_train(const Options& opt) {
    RunConfig config = load_config_file(opt.config_path);
    if (opt.seed_set) config.seed = opt.seed;
    ensure_dir(opt.out_dir);

    TrainerState state =
        init_trainer(config.model, config.meta, config.seed, config.dist.modes.size());
    std::printf("training %s (%s), %zu iterations, meta-batch %zu, seed %llu\n",
                trainer_name(config.meta.trainer).c_str(),
                modulation_name(config.meta.modulation).c_str(), config.meta.iterations,
                config.meta.meta_batch, static_cast<unsigned long long>(config.seed));
    const TrainHook hook = [&](const TrainerState& s) {
        std::printf("  iteration %llu / %zu\n", static_cast<unsigned long long>(s.iteration),
                    config.meta.iterations);
        std::fflush(stdout);
    };
    const TrainLog log = train(state, config.inner, config.meta, config.dist, config.seed,
                               config.eval_every, hook);

    const std::string log_path = join(opt.out_dir, "train_log.csv");
    const std::string ckpt_path = join(opt.out_dir, "checkpoint.json");
    write_train_log_csv(log, log_path);
    save_checkpoint(ckpt_path, Checkpoint{kCheckpointVersion, config, state});
    if (!log.records.empty()) {
        std::printf("final loss %.6g after %zu iterations\n", log.records.back().loss,
                    log.records.size());
    }
    std::printf("wrote %s and %s\n", ckpt_path.c_str(), log_path.c_str());
    return 0;
}

int do_eval(const Options& opt) {
    const Checkpoint cp = load_checkpoint(opt.checkpoint_path);
    const RunConfig& config = cp.config;
    const std::size_t n_tasks = opt.tasks_set ? opt.tasks : config.eval_tasks;
    const std::uint64_t seed = opt.seed_set ? opt.seed : config.seed;
    ensure_dir(opt.out_dir);

    const EvalReport report =
        evaluate_model(cp.state, config.dist, n_tasks, config.inner, seed);

    const std::size_t last = report.eval_steps;
    std::printf("trainer %s (%s), iteration %llu, %zu held-out tasks, %zu adaptation steps\n\n",
                trainer_name(config.meta.trainer).c_str(),
                modulation_name(config.meta.modulation).c_str(),
                static_cast<unsigned long long>(cp.state.iteration), n_tasks, last);
    std::printf("%-22s %14s %14s %14s %14s\n", "", "post-mod", "post-adapt", "post-mod*",
                "post-adapt*");
    std::printf("%-22s %14.4f %14.4f %14.4f %14.4f\n", "overall", report.mse_by_step[0],
                report.mse_by_step[last], report.mse_clean_by_step[0],
                report.mse_clean_by_step[last]);
    for (std::size_t m = 0; m < report.tasks_by_mode.size(); ++m) {
        if (report.tasks_by_mode[m] == 0) continue;
        const std::string label =
            "mode " + std::to_string(m) + " (" + family_name(config.dist.modes[m].family) + ")";
        std::printf("%-22s %14.4f %14.4f %14.4f %14.4f\n", label.c_str(),
                    report.mode_mse_by_step[m][0], report.mode_mse_by_step[m][last],
                    report.mode_mse_clean_by_step[m][0], report.mode_mse_clean_by_step[m][last]);
    }
    std::printf("\nfull sweep (noisy):");
    for (double v : report.mse_by_step) std::printf(" %.4f", v);
    std::printf("\n* = MSE against noise-free targets\n");

    const std::string report_path = join(opt.out_dir, "eval_report.json");
    std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open \"" + report_path + "\" for writing");
    out << eval_report_json(report);
    if (!out.flush()) throw std::runtime_error("failed writing \"" + report_path + "\"");
    std::printf("wrote %s\n", report_path.c_str());
    return 0;
}

int do_embed(const Options& opt) {
    const Checkpoint cp = load_checkpoint(opt.checkpoint_path);
    const RunConfig& config = cp.config;
    const std::size_t n_tasks = opt.tasks_set ? opt.tasks : config.eval_tasks;
    const std::uint64_t seed = opt.seed_set ? opt.seed : config.seed;
    ensure_dir(opt.out_dir);

    const std::string csv_path = join(opt.out_dir, "embeddings.csv");
    const EmbeddingDump dump =
        export_embeddings(cp.state, config.dist, n_tasks, seed, csv_path);

    Tensor rows = Tensor::zeros({n_tasks, dump.upsilon_dim});
    std::vector<std::size_t> labels(n_tasks);
    for (std::size_t t = 0; t < n_tasks; ++t) {
        labels[t] = dump.tasks[t].mode_index;
        for (std::size_t j = 0; j < dump.upsilon_dim; ++j) {
            rows[t * dump.upsilon_dim + j] = dump.upsilon[t][j];
        }
    }
    const PcaResult pca = pca_project(rows);
    const std::string pca_path = join(opt.out_dir, "embeddings_pca.csv");
    {
        std::ofstream out(pca_path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open \"" + pca_path + "\" for writing");
        out << "mode,family,pc1,pc2\n";
        char buf[96];
        for (std::size_t t = 0; t < n_tasks; ++t) {
            std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g\n", labels[t],
                          family_name(dump.tasks[t].family).c_str(), pca.coords[t * 2],
                          pca.coords[t * 2 + 1]);
            out << buf;
        }
        if (!out.flush()) throw std::runtime_error("failed writing \"" + pca_path + "\"");
    }
    const double purity = centroid_purity(rows, labels, config.dist.modes.size());
    std::printf("%zu tasks embedded, upsilon dim %zu\n", n_tasks, dump.upsilon_dim);
    if (pca.degenerate) std::printf("warning: zero-variance embeddings, PCA degenerate\n");
    std::printf("centroid purity: %.4f\n", purity);
    std::printf("wrote %s and %s\n", csv_path.c_str(), pca_path.c_str());
    return 0;
}

int do_curves(const Options& opt) {
    const Checkpoint cp = load_checkpoint(opt.checkpoint_path);
    const RunConfig& config = cp.config;
    const std::size_t n_tasks = opt.tasks_set ? opt.tasks : config.dist.modes.size();
    const std::uint64_t seed = opt.seed_set ? opt.seed : config.seed;
    ensure_dir(opt.out_dir);

    for (std::size_t t = 0; t < n_tasks; ++t) {
        auto [task, data] = sample_task_with_data(config.dist, seed, StreamDomain::Curves, t);
        const std::string path = join(opt.out_dir, "curves_task" + std::to_string(t) + "_mode" +
                                                       std::to_string(task.mode_index) + ".csv");
        emit_curves(cp.state, task, data, config.dist, config.inner, path);
        std::printf("wrote %s (%s)\n", path.c_str(), family_name(task.family).c_str());
    }
    return 0;
}

ParamSet filter_prefix(const ParamSet& params, const std::string& prefix, bool keep) {
    ParamSet out;
    for (const auto& [name, e] : params) {
        if ((name.rfind(prefix, 0) == 0) == keep) out.add(name, e);
    }
    return out;
}

int do_gradcheck(bool corrupt) {
    const double analytic_scale = corrupt ? 1.01 : 1.0;
    if (corrupt) std::printf("negative control: analytic gradients scaled by 1.01\n");

    DistConfig dist;
    dist.modes = {ModeSpec::sinusoid(), ModeSpec::linear()};
    dist.support_size = 3;
    dist.query_size = 5;

    struct Suite {
        std::string name;
        GradCheckReport report;
    };
    std::vector<Suite> suites;

    {  // first-order: MSE of a small learner on one support set
        RandomStream rng = RandomStream::keyed(2024, StreamDomain::GradCheck, 1);
        ParamSet theta = init_learner({1, 6, 6, 1}, rng);
        auto [task, data] = sample_task_with_data(dist, 2024, StreamDomain::GradCheck, 2);
        const Expr target = column_tensor(data.support_y);
        const std::vector<double> sx = data.support_x;
        const ScalarBuilder loss = [sx, target](const ParamSet& p) {
            const Expr pred = forward(p, Modulation{}, column_tensor(sx));
            return mean_all(square(sub(pred, target)));
        };
        suites.push_back({"first-order support MSE",
                          finite_difference_check(loss, theta, 1e-5, 1e-6, analytic_scale)});

        // second-order: squared norm of that gradient, differentiated again
        const ScalarBuilder grad_norm = [loss](const ParamSet& p) {
            const ParamSet grads = gradient(loss(p), p);
            Expr acc = scalar_expr(0.0);
            for (const auto& [name, g] : grads) acc = add(acc, sum_all(square(g)));
            return acc;
        };
        suites.push_back({"second-order gradient norm",
                          finite_difference_check(grad_norm, theta, 1e-5, 1e-5, analytic_scale)});
    }

    {  // meta-gradient: outer objective through one modulated inner step
        ModelConfig model;
        model.widths = {1, 8, 8, 1};
        model.gru_hidden = 4;
        model.generator_hidden = 6;
        MetaConfig meta;
        meta.trainer = TrainerKind::MuMoMaml;
        meta.modulation = ModulationKind::Film;
        const TrainerState state = init_trainer(model, meta, 4242, dist.modes.size());

        ParamSet merged;
        for (const auto& [name, e] : state.learners[0]) merged.add(name, e);
        for (const auto& [name, e] : state.omega) merged.add(name, e);
        std::vector<TaskData> batch = {
            sample_task_with_data(dist, 4242, StreamDomain::GradCheck, 7).second};
        InnerConfig inner;  // alpha 0.01, one train step
        const ScalarBuilder objective = [batch, inner](const ParamSet& p) {
            const ParamSet theta = filter_prefix(p, "learner.", true);
            const ParamSet omega = filter_prefix(p, "learner.", false);
            return meta_objective(theta, omega, batch, ModulationKind::Film, inner,
                                  GradOrder::Second);
        };
        suites.push_back({"second-order meta-gradient",
                          finite_difference_check(objective, merged, 1e-5, 1e-5, analytic_scale)});
    }

    bool all_pass = true;
    for (const Suite& s : suites) {
        all_pass = all_pass && s.report.pass;
        std::printf("%-28s entries %4zu  max rel err %.3e  tol %.1e  %s\n", s.name.c_str(),
                    s.report.checked_entries, s.report.max_rel_error, s.report.tolerance,
                    s.report.pass ? "PASS" : "FAIL");
        if (!s.report.pass) {
            std::printf("  worst: %s[%zu]\n", s.report.worst_param.c_str(), s.report.worst_entry);
        }
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"multimodal meta-learning for few-shot regression"};
    app.require_subcommand(1);

    Options opt;
    auto add_common = [&](CLI::App* sub, bool with_config, bool with_checkpoint) {
        if (with_config) {
            sub->add_option("--config", opt.config_path, "run configuration JSON")->required();
        }
        if (with_checkpoint) {
            sub->add_option("--checkpoint", opt.checkpoint_path, "checkpoint JSON")->required();
        }
        sub->add_option("--seed", opt.seed, "seed override")->each([&](const std::string&) {
            opt.seed_set = true;
        });
        sub->add_option("--out", opt.out_dir, "output directory (default .)");
    };
    auto add_tasks = [&](CLI::App* sub) {
        sub->add_option("--tasks", opt.tasks, "held-out task count")->each([&](const std::string&) {
            opt.tasks_set = true;
        });
    };

    CLI::App* train_cmd = app.add_subcommand("train", "meta-train and write a checkpoint");
    add_common(train_cmd, true, false);
    CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on held-out tasks");
    add_common(eval_cmd, false, true);
    add_tasks(eval_cmd);
    CLI::App* embed_cmd = app.add_subcommand("embed", "export task embeddings, PCA, purity");
    add_common(embed_cmd, false, true);
    add_tasks(embed_cmd);
    CLI::App* curves_cmd = app.add_subcommand("curves", "emit adaptation curves on a dense grid");
    add_common(curves_cmd, false, true);
    add_tasks(curves_cmd);
    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference gradient suites");
    gradcheck_cmd->add_flag("--corrupt", opt.corrupt,
                            "scale analytic gradients to prove the checker catches errors");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train_cmd->parsed()) return do_train(opt);
        if (eval_cmd->parsed()) return do_eval(opt);
        if (embed_cmd->parsed()) return do_embed(opt);
        if (curves_cmd->parsed()) return do_curves(opt);
        if (gradcheck_cmd->parsed()) return do_gradcheck(opt.corrupt);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;  // unreachable with require_subcommand(1)
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.emplace_back("modalmeta");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const std::string& s : full) argv.push_back(s.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace modalmeta

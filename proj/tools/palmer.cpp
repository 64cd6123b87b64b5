// palmer: retrieval-based long-horizon planning over a replay buffer.
// Subcommands cover the full pipeline: collect a random-walk buffer,
// train the Q function and encoder, build roadmaps, plan, evaluate,
// refine the buffer, and emit reports. Every command prints a JSON
// summary on success and a JSON error on failure.

#include <CLI11.hpp>

#include <iostream>

#include "palmer/harness.hpp"

using namespace palmer;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;

    Config load() const {
        Config cfg = config_path.empty() ? Config() : Config::from_file(config_path);
        for (const auto& kv : overrides) cfg.set_override(kv);
        return cfg;
    }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key-value config file");
    cmd->add_option("--set", args.overrides, "override config entries as key=value");
}

void emit(const Json& j) { std::cout << j.dump(1) << std::endl; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"PALMER: planning by retrieving and stitching replay-buffer trajectories"};
    app.require_subcommand(1);

    CommonArgs collect_args;
    std::string collect_out;
    auto* collect = app.add_subcommand("collect", "random-walk exploration into a .plog buffer");
    add_common(collect, collect_args);
    collect->add_option("--out", collect_out, "output .plog path")->required();

    auto* buffer = app.add_subcommand("buffer", "buffer inspection");
    std::string buffer_info_path;
    auto* buffer_info = buffer->add_subcommand("info", "print episode/step counts");
    buffer_info->add_option("path", buffer_info_path, ".plog path")->required();

    CommonArgs trainq_args;
    std::string trainq_log, trainq_out, trainq_curve;
    auto* trainq = app.add_subcommand("train-q", "offline goal-conditioned Q-learning");
    add_common(trainq, trainq_args);
    trainq->add_option("--log", trainq_log, "input .plog")->required();
    trainq->add_option("--out", trainq_out, "output model file")->required();
    trainq->add_option("--curve", trainq_curve, "training curve CSV");

    CommonArgs traine_args;
    std::string traine_log, traine_q, traine_out, traine_curve;
    auto* traine = app.add_subcommand("train-embed", "contrastive encoder + auxiliary heads");
    add_common(traine, traine_args);
    traine->add_option("--log", traine_log, "input .plog")->required();
    traine->add_option("--q", traine_q, "trained Q model (frozen)")->required();
    traine->add_option("--out", traine_out, "output model file")->required();
    traine->add_option("--curve", traine_curve, "training curve CSV");

    CommonArgs roadmap_args;
    std::string roadmap_log, roadmap_embed, roadmap_out, roadmap_svg, roadmap_q;
    auto* roadmap = app.add_subcommand("build-roadmap", "R-PRM / R-RRT / R-RRT* construction");
    add_common(roadmap, roadmap_args);
    roadmap->add_option("--log", roadmap_log)->required();
    roadmap->add_option("--embed", roadmap_embed)->required();
    roadmap->add_option("--out", roadmap_out, "roadmap JSON")->required();
    roadmap->add_option("--svg", roadmap_svg, "roadmap figure");
    roadmap->add_option("--q", roadmap_q, "Q model (baseline roadmap only)");

    CommonArgs plan_args;
    std::string plan_log, plan_embed, plan_roadmap, plan_out, plan_svg;
    auto* plan = app.add_subcommand("plan", "stitch a trajectory between start and goal");
    add_common(plan, plan_args);
    plan->add_option("--log", plan_log)->required();
    plan->add_option("--embed", plan_embed)->required();
    plan->add_option("--roadmap", plan_roadmap)->required();
    plan->add_option("--out", plan_out, "plan JSON")->required();
    plan->add_option("--svg", plan_svg, "plan figure");

    CommonArgs eval_args;
    std::string eval_log, eval_q, eval_embed, eval_roadmap, eval_out;
    auto* eval = app.add_subcommand("eval", "success curves per distance band");
    add_common(eval, eval_args);
    eval->add_option("--log", eval_log)->required();
    eval->add_option("--q", eval_q)->required();
    eval->add_option("--embed", eval_embed, "embed model (pi_m / pi_mstar)");
    eval->add_option("--roadmap", eval_roadmap, "roadmap JSON (pi_mstar)");
    eval->add_option("--out", eval_out, "results CSV");

    CommonArgs refine_args;
    std::string refine_log, refine_q, refine_embed, refine_out_log, refine_out_q, refine_out_embed,
        refine_report;
    auto* refine = app.add_subcommand("refine", "plan-execute-insert memory refinement cycle");
    add_common(refine, refine_args);
    refine->add_option("--log", refine_log)->required();
    refine->add_option("--q", refine_q)->required();
    refine->add_option("--embed", refine_embed)->required();
    refine->add_option("--out-log", refine_out_log)->required();
    refine->add_option("--out-q", refine_out_q)->required();
    refine->add_option("--out-embed", refine_out_embed)->required();
    refine->add_option("--report", refine_report, "round report CSV");

    CommonArgs report_args;
    std::string report_log, report_q, report_embed, report_prefix;
    auto* report = app.add_subcommand("report", "distance calibration and false-edge comparison");
    add_common(report, report_args);
    report->add_option("--log", report_log)->required();
    report->add_option("--q", report_q)->required();
    report->add_option("--embed", report_embed)->required();
    report->add_option("--out-prefix", report_prefix)->required();

    auto* per = app.add_subcommand("per", "perceptual experience retrieval");
    CommonArgs probe_args;
    std::string probe_log, probe_embed, probe_start, probe_goal;
    auto* probe = per->add_subcommand("probe", "trace one retrieval");
    add_common(probe, probe_args);
    probe->add_option("--log", probe_log)->required();
    probe->add_option("--embed", probe_embed)->required();
    probe->add_option("--start", probe_start, "x,y")->required();
    probe->add_option("--goal", probe_goal, "x,y")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (collect->parsed()) {
            emit(cmd_collect(collect_args.load(), collect_out));
        } else if (buffer_info->parsed()) {
            emit(cmd_buffer_info(buffer_info_path));
        } else if (trainq->parsed()) {
            emit(cmd_train_q(trainq_args.load(), trainq_log, trainq_out, trainq_curve));
        } else if (traine->parsed()) {
            emit(cmd_train_embed(traine_args.load(), traine_log, traine_q, traine_out, traine_curve));
        } else if (roadmap->parsed()) {
            emit(cmd_build_roadmap(roadmap_args.load(), roadmap_log, roadmap_embed, roadmap_out,
                                   roadmap_svg, roadmap_q));
        } else if (plan->parsed()) {
            emit(cmd_plan(plan_args.load(), plan_log, plan_embed, plan_roadmap, plan_out, plan_svg));
        } else if (eval->parsed()) {
            emit(cmd_eval(eval_args.load(), eval_log, eval_q, eval_embed, eval_roadmap, eval_out));
        } else if (refine->parsed()) {
            emit(cmd_refine(refine_args.load(), refine_log, refine_q, refine_embed, refine_out_log,
                            refine_out_q, refine_out_embed, refine_report));
        } else if (report->parsed()) {
            emit(cmd_report(report_args.load(), report_log, report_q, report_embed, report_prefix));
        } else if (probe->parsed()) {
            emit(cmd_per_probe(probe_args.load(), probe_log, probe_embed, probe_start, probe_goal));
        } else {
            std::cerr << app.help() << std::endl;
            return 2;
        }
    } catch (const std::exception& e) {
        Json err;
        err["error"] = e.what();
        std::cerr << err.dump() << std::endl;
        return 1;
    }
    return 0;
}

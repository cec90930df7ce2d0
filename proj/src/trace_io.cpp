#include <fstream>

#include "knotforge/error.hpp"
#include "knotforge/scheduler.hpp"

namespace knotforge::sched {

using nlohmann::json;

json to_json(const ChunkRecord& r) {
    return {{"chunk", r.chunk},
            {"t_wall_ms", r.t_wall_ms},
            {"ref_pos", r.ref_pos},
            {"recache", r.recache},
            {"cache_frames", r.cache_frames},
            {"knot_fused_l2", r.knot_fused_l2},
            {"start", r.start},
            {"score_elements", r.score_elements}};
}

json to_json(const RolloutConfig& cfg) {
    return {{"frames", cfg.frames},
            {"chunk", cfg.c},
            {"window", cfg.L},
            {"knot", cfg.k},
            {"ahead_interleave", cfg.s},
            {"ref_start", cfg.n0},
            {"seed", cfg.seed},
            {"running_ahead", cfg.running_ahead},
            {"fast_recache", cfg.fast_recache},
            {"steps", cfg.schedule.steps}};
}

RolloutConfig rollout_config_from_json(const json& j) {
    RolloutConfig cfg;
    cfg.frames = j.value("frames", cfg.frames);
    cfg.c = j.value("chunk", cfg.c);
    cfg.L = j.value("window", cfg.L);
    cfg.k = j.value("knot", cfg.k);
    cfg.s = j.value("ahead_interleave", cfg.s);
    cfg.n0 = j.value("ref_start", cfg.n0);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.running_ahead = j.value("running_ahead", cfg.running_ahead);
    cfg.fast_recache = j.value("fast_recache", cfg.fast_recache);
    cfg.schedule.steps = j.value("steps", cfg.schedule.steps);
    return cfg;
}

namespace {

std::ofstream open_jsonl(const std::filesystem::path& path, const json& header) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    if (!header.is_null()) {
        out << header.dump() << '\n';
    }
    return out;
}

}  // namespace

void write_trace_jsonl(const std::filesystem::path& path, const RolloutTrace& trace,
                       const json& header) {
    auto out = open_jsonl(path, header);
    for (const auto& r : trace.chunks) {
        out << to_json(r).dump() << '\n';
    }
}

void write_cache_trace_jsonl(const std::filesystem::path& path, const RolloutTrace& trace,
                             const json& header) {
    auto out = open_jsonl(path, header);
    for (const auto& s : trace.cache) {
        out << s.to_json().dump() << '\n';
    }
}

}  // namespace knotforge::sched

#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include "spikegrid/harness.hpp"

namespace spikegrid {

namespace {

using nlohmann::json;

void check_keys(const json& o, std::initializer_list<const char*> allowed,
                const std::string& where)
{
    if (!o.is_object())
        throw std::invalid_argument("config: " + where + " must be an object");
    for (const auto& item : o.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                ok = true;
                break;
            }
        if (!ok)
            throw std::invalid_argument("config: unknown key '" + item.key() + "' in " +
                                        where);
    }
}

std::string kind_name(DisturbanceKind k)
{
    switch (k) {
        case DisturbanceKind::LoadStep: return "load_step";
        case DisturbanceKind::GridSag: return "grid_sag";
        case DisturbanceKind::LineOutage: return "line_outage";
        case DisturbanceKind::ParamMismatch: return "param_mismatch";
    }
    return "load_step";
}

DisturbanceKind kind_from_name(const std::string& s)
{
    if (s == "load_step") return DisturbanceKind::LoadStep;
    if (s == "grid_sag") return DisturbanceKind::GridSag;
    if (s == "line_outage") return DisturbanceKind::LineOutage;
    if (s == "param_mismatch") return DisturbanceKind::ParamMismatch;
    throw std::invalid_argument("config: unknown disturbance kind '" + s + "'");
}

std::string shape_name(CarrierShape s)
{
    return s == CarrierShape::Triangular ? "triangular" : "rising_sawtooth";
}

CarrierShape shape_from_name(const std::string& s)
{
    if (s == "rising_sawtooth") return CarrierShape::RisingSawtooth;
    if (s == "triangular") return CarrierShape::Triangular;
    throw std::invalid_argument("config: unknown carrier shape '" + s + "'");
}

VsgParams vsg_from_json(const json& j)
{
    check_keys(j,
               {"h", "d_p", "k_q", "e0", "p_ref", "q_ref", "omega_filt", "k_v", "k_i",
                "g_sec_v", "g_sec_q", "g_sec_f", "frt_on_targets"},
               "converter.vsg");
    VsgParams p;
    p.h = j.value("h", p.h);
    p.d_p = j.value("d_p", p.d_p);
    p.k_q = j.value("k_q", p.k_q);
    p.e0 = j.value("e0", p.e0);
    p.p_ref = j.value("p_ref", p.p_ref);
    p.q_ref = j.value("q_ref", p.q_ref);
    p.omega_filt = j.value("omega_filt", p.omega_filt);
    p.k_v = j.value("k_v", p.k_v);
    p.k_i = j.value("k_i", p.k_i);
    p.g_sec_v = j.value("g_sec_v", p.g_sec_v);
    p.g_sec_q = j.value("g_sec_q", p.g_sec_q);
    p.g_sec_f = j.value("g_sec_f", p.g_sec_f);
    p.frt_on_targets = j.value("frt_on_targets", p.frt_on_targets);
    return p;
}

json vsg_to_json(const VsgParams& p)
{
    json j;
    j["h"] = p.h;
    j["d_p"] = p.d_p;
    j["k_q"] = p.k_q;
    j["e0"] = p.e0;
    j["p_ref"] = p.p_ref;
    j["q_ref"] = p.q_ref;
    j["omega_filt"] = p.omega_filt;
    j["k_v"] = p.k_v;
    j["k_i"] = p.k_i;
    j["g_sec_v"] = p.g_sec_v;
    j["g_sec_q"] = p.g_sec_q;
    j["g_sec_f"] = p.g_sec_f;
    j["frt_on_targets"] = p.frt_on_targets;
    return j;
}

}  // namespace

json load_json_file(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open '" + path + "'");
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config: parse error in '" + path + "': " + e.what());
    }
    return j;
}

void apply_overrides(json& doc, const std::vector<std::string>& sets)
{
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("override must look like key.path=value: " + s);
        const std::string path = s.substr(0, eq);
        const std::string raw = s.substr(eq + 1);

        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;

        json* node = &doc;
        std::size_t pos = 0;
        while (true) {
            const auto dot = path.find('.', pos);
            const std::string tok = path.substr(pos, dot - pos);
            const bool last = dot == std::string::npos;
            if (node->is_array()) {
                std::size_t idx = 0;
                try {
                    idx = std::stoul(tok);
                } catch (...) {
                    throw std::invalid_argument("override: '" + tok +
                                                "' is not an array index in " + s);
                }
                if (idx >= node->size())
                    throw std::invalid_argument("override: index " + tok +
                                                " out of range in " + s);
                if (last) {
                    (*node)[idx] = value;
                    break;
                }
                node = &(*node)[idx];
            } else {
                if (last) {
                    (*node)[tok] = value;
                    break;
                }
                node = &(*node)[tok];
            }
            pos = dot + 1;
        }
    }
}

Scenario scenario_from_json(const json& j)
{
    check_keys(j,
               {"name", "base", "dt", "t_end", "t_settle", "seed", "carrier", "sampling",
                "encoding", "buses", "lines", "converters", "schedule", "snn", "train",
                "run", "checks"},
               "scenario");
    Scenario s;
    s.name = j.value("name", s.name);
    s.dt = j.value("dt", s.dt);
    s.t_end = j.value("t_end", s.t_end);
    s.t_settle = j.value("t_settle", s.t_settle);
    s.seed = j.value("seed", s.seed);

    if (j.contains("base")) {
        const json& b = j.at("base");
        check_keys(b, {"s_base_va", "v_base_v", "f_base_hz"}, "base");
        s.base.s_base_va = b.value("s_base_va", s.base.s_base_va);
        s.base.v_base_v = b.value("v_base_v", s.base.v_base_v);
        s.base.f_base_hz = b.value("f_base_hz", s.base.f_base_hz);
    }
    if (j.contains("carrier")) {
        const json& c = j.at("carrier");
        check_keys(c, {"period", "shape"}, "carrier");
        s.carrier.period = c.value("period", s.carrier.period);
        if (c.contains("shape")) s.carrier.shape = shape_from_name(c.at("shape"));
    }
    if (j.contains("sampling")) {
        const json& c = j.at("sampling");
        check_keys(c, {"window_len", "sigma_v", "sigma_i", "holdoff"}, "sampling");
        s.sampling.window_len = c.value("window_len", s.sampling.window_len);
        s.sampling.thresholds.sigma_v = c.value("sigma_v", s.sampling.thresholds.sigma_v);
        s.sampling.thresholds.sigma_i = c.value("sigma_i", s.sampling.thresholds.sigma_i);
        s.sampling.holdoff = c.value("holdoff", s.sampling.holdoff);
    }
    if (j.contains("encoding")) {
        const json& c = j.at("encoding");
        check_keys(c, {"scale_v", "scale_i"}, "encoding");
        s.encoding.scale_v = c.value("scale_v", s.encoding.scale_v);
        s.encoding.scale_i = c.value("scale_i", s.encoding.scale_i);
    }
    for (const json& b : j.value("buses", json::array())) {
        check_keys(b, {"name", "g_load", "b_shunt", "grid", "v_grid_re", "v_grid_im"},
                   "bus");
        Bus bus;
        bus.name = b.value("name", std::string("bus") +
                                       std::to_string(s.topology.buses.size()));
        bus.g_load = b.value("g_load", 0.0);
        bus.b_shunt = b.value("b_shunt", 0.0);
        bus.grid = b.value("grid", false);
        bus.v_grid = {b.value("v_grid_re", 1.0), b.value("v_grid_im", 0.0)};
        s.topology.buses.push_back(std::move(bus));
    }
    for (const json& l : j.value("lines", json::array())) {
        check_keys(l, {"from", "to", "r", "x", "closed"}, "line");
        Line line;
        line.from = l.at("from").get<std::size_t>();
        line.to = l.at("to").get<std::size_t>();
        line.r = l.value("r", 0.0);
        line.x = l.value("x", 0.0);
        line.closed = l.value("closed", true);
        s.topology.lines.push_back(line);
    }
    for (const json& c : j.value("converters", json::array())) {
        check_keys(c, {"bus", "s_rated", "r_f", "x_f", "b_f", "v_dc", "i_max", "vsg"},
                   "converter");
        Converter cv;
        cv.bus = c.at("bus").get<std::size_t>();
        cv.s_rated = c.value("s_rated", cv.s_rated);
        cv.r_f = c.value("r_f", cv.r_f);
        cv.x_f = c.value("x_f", cv.x_f);
        cv.b_f = c.value("b_f", cv.b_f);
        cv.v_dc = c.value("v_dc", cv.v_dc);
        cv.i_max = c.value("i_max", cv.i_max);
        if (c.contains("vsg")) cv.vsg = vsg_from_json(c.at("vsg"));
        s.topology.converters.push_back(std::move(cv));
    }
    for (const json& d : j.value("schedule", json::array())) {
        check_keys(d, {"t", "kind", "target", "magnitude"}, "schedule entry");
        Disturbance dist;
        dist.t = d.at("t").get<double>();
        dist.kind = kind_from_name(d.at("kind").get<std::string>());
        dist.target = d.value("target", std::size_t{0});
        dist.magnitude = d.value("magnitude", 0.0);
        s.schedule.push_back(dist);
    }
    return s;
}

json scenario_to_json(const Scenario& s)
{
    json j;
    j["name"] = s.name;
    j["dt"] = s.dt;
    j["t_end"] = s.t_end;
    j["t_settle"] = s.t_settle;
    j["seed"] = s.seed;
    j["base"] = {{"s_base_va", s.base.s_base_va},
                 {"v_base_v", s.base.v_base_v},
                 {"f_base_hz", s.base.f_base_hz}};
    j["carrier"] = {{"period", s.carrier.period}, {"shape", shape_name(s.carrier.shape)}};
    j["sampling"] = {{"window_len", s.sampling.window_len},
                     {"sigma_v", s.sampling.thresholds.sigma_v},
                     {"sigma_i", s.sampling.thresholds.sigma_i},
                     {"holdoff", s.sampling.holdoff}};
    j["encoding"] = {{"scale_v", s.encoding.scale_v}, {"scale_i", s.encoding.scale_i}};
    j["buses"] = json::array();
    for (const Bus& b : s.topology.buses)
        j["buses"].push_back({{"name", b.name},
                              {"g_load", b.g_load},
                              {"b_shunt", b.b_shunt},
                              {"grid", b.grid},
                              {"v_grid_re", b.v_grid.real()},
                              {"v_grid_im", b.v_grid.imag()}});
    j["lines"] = json::array();
    for (const Line& l : s.topology.lines)
        j["lines"].push_back({{"from", l.from},
                              {"to", l.to},
                              {"r", l.r},
                              {"x", l.x},
                              {"closed", l.closed}});
    j["converters"] = json::array();
    for (const Converter& c : s.topology.converters)
        j["converters"].push_back({{"bus", c.bus},
                                   {"s_rated", c.s_rated},
                                   {"r_f", c.r_f},
                                   {"x_f", c.x_f},
                                   {"b_f", c.b_f},
                                   {"v_dc", c.v_dc},
                                   {"i_max", c.i_max},
                                   {"vsg", vsg_to_json(c.vsg)}});
    j["schedule"] = json::array();
    for (const Disturbance& d : s.schedule)
        j["schedule"].push_back({{"t", d.t},
                                 {"kind", kind_name(d.kind)},
                                 {"target", d.target},
                                 {"magnitude", d.magnitude}});
    return j;
}

SnnConfig snn_config_from_json(const json& j, double dt)
{
    check_keys(j,
               {"layer_sizes", "tau_m_hidden", "tau_m_output", "v_th", "v_rest",
                "v_reset", "g_l", "tau_rise", "tau_decay", "surrogate_slope",
                "init_gain", "seed"},
               "snn");
    SnnConfig c;
    c.dt = dt;
    if (j.contains("layer_sizes"))
        c.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    c.tau_m_hidden = j.value("tau_m_hidden", c.tau_m_hidden);
    c.tau_m_output = j.value("tau_m_output", c.tau_m_output);
    c.v_th = j.value("v_th", c.v_th);
    c.v_rest = j.value("v_rest", c.v_rest);
    c.v_reset = j.value("v_reset", c.v_reset);
    c.g_l = j.value("g_l", c.g_l);
    c.tau_rise = j.value("tau_rise", c.tau_rise);
    c.tau_decay = j.value("tau_decay", c.tau_decay);
    c.surrogate_slope = j.value("surrogate_slope", c.surrogate_slope);
    c.init_gain = j.value("init_gain", c.init_gain);
    c.seed = j.value("seed", c.seed);
    return c;
}

json snn_config_to_json(const SnnConfig& c)
{
    json j;
    j["layer_sizes"] = c.layer_sizes;
    j["tau_m_hidden"] = c.tau_m_hidden;
    j["tau_m_output"] = c.tau_m_output;
    j["v_th"] = c.v_th;
    j["v_rest"] = c.v_rest;
    j["v_reset"] = c.v_reset;
    j["g_l"] = c.g_l;
    j["tau_rise"] = c.tau_rise;
    j["tau_decay"] = c.tau_decay;
    j["surrogate_slope"] = c.surrogate_slope;
    j["init_gain"] = c.init_gain;
    j["seed"] = c.seed;
    return j;
}

TrainOptions train_options_from_json(const json& j)
{
    check_keys(j,
               {"epochs", "lr", "lr_decay", "grad_clip", "segment_len",
                "warmup_steps", "seed", "mode", "divergence_limit", "adam_beta1",
                "adam_beta2", "adam_eps", "shuffle_segments", "online_single_pass",
                "max_batches"},
               "train");
    TrainOptions o;
    o.epochs = j.value("epochs", o.epochs);
    o.lr = j.value("lr", o.lr);
    o.lr_decay = j.value("lr_decay", o.lr_decay);
    o.grad_clip = j.value("grad_clip", o.grad_clip);
    o.segment_len = j.value("segment_len", o.segment_len);
    o.warmup_steps = j.value("warmup_steps", o.warmup_steps);
    o.seed = j.value("seed", o.seed);
    if (j.contains("mode")) {
        const std::string m = j.at("mode");
        if (m == "hard")
            o.mode = SpikeMode::Hard;
        else if (m == "smooth")
            o.mode = SpikeMode::Smooth;
        else
            throw std::invalid_argument("config: unknown spike mode '" + m + "'");
    }
    o.divergence_limit = j.value("divergence_limit", o.divergence_limit);
    o.adam_beta1 = j.value("adam_beta1", o.adam_beta1);
    o.adam_beta2 = j.value("adam_beta2", o.adam_beta2);
    o.adam_eps = j.value("adam_eps", o.adam_eps);
    o.shuffle_segments = j.value("shuffle_segments", o.shuffle_segments);
    o.online_single_pass = j.value("online_single_pass", o.online_single_pass);
    return o;
}

json train_options_to_json(const TrainOptions& o)
{
    json j;
    j["epochs"] = o.epochs;
    j["lr"] = o.lr;
    j["lr_decay"] = o.lr_decay;
    j["grad_clip"] = o.grad_clip;
    j["segment_len"] = o.segment_len;
    j["warmup_steps"] = o.warmup_steps;
    j["seed"] = o.seed;
    j["mode"] = o.mode == SpikeMode::Smooth ? "smooth" : "hard";
    j["divergence_limit"] = o.divergence_limit;
    j["adam_beta1"] = o.adam_beta1;
    j["adam_beta2"] = o.adam_beta2;
    j["adam_eps"] = o.adam_eps;
    j["shuffle_segments"] = o.shuffle_segments;
    j["online_single_pass"] = o.online_single_pass;
    return j;
}

RunConfigFile run_config_from_json(json doc, const std::vector<std::string>& overrides)
{
    apply_overrides(doc, overrides);

    RunConfigFile cfg;
    cfg.scenario = scenario_from_json(doc);
    cfg.scenario.validate();
    cfg.snn = snn_config_from_json(doc.value("snn", json::object()), cfg.scenario.dt);
    cfg.train = train_options_from_json(doc.value("train", json::object()));
    if (doc.contains("train"))
        cfg.train_max_batches = doc.at("train").value("max_batches", std::size_t{0});

    if (doc.contains("run")) {
        const json& r = doc.at("run");
        check_keys(r, {"decimation", "frt_runtime", "record_hidden"}, "run");
        cfg.run.decimation = r.value("decimation", cfg.run.decimation);
        cfg.run.frt_runtime = r.value("frt_runtime", cfg.run.frt_runtime);
        cfg.run.record_hidden = r.value("record_hidden", cfg.run.record_hidden);
    }
    if (doc.contains("checks")) {
        const json& c = doc.at("checks");
        check_keys(c,
                   {"q_sharing_max", "v_reg_max", "i_max_overshoot", "expect_unstable",
                    "expect_overcurrent", "require_no_overcurrent", "min_events"},
                   "checks");
        if (c.contains("q_sharing_max")) cfg.checks.q_sharing_max = c.at("q_sharing_max").get<double>();
        if (c.contains("v_reg_max")) cfg.checks.v_reg_max = c.at("v_reg_max").get<double>();
        if (c.contains("i_max_overshoot"))
            cfg.checks.i_max_overshoot = c.at("i_max_overshoot").get<double>();
        cfg.checks.expect_unstable = c.value("expect_unstable", false);
        cfg.checks.expect_overcurrent = c.value("expect_overcurrent", false);
        cfg.checks.require_no_overcurrent = c.value("require_no_overcurrent", false);
        if (c.contains("min_events"))
            cfg.checks.min_events = c.at("min_events").get<std::size_t>();
    }

    cfg.effective = scenario_to_json(cfg.scenario);
    cfg.effective["snn"] = snn_config_to_json(cfg.snn);
    cfg.effective["train"] = train_options_to_json(cfg.train);
    if (cfg.train_max_batches > 0)
        cfg.effective["train"]["max_batches"] = cfg.train_max_batches;
    cfg.effective["run"] = {{"decimation", cfg.run.decimation},
                            {"frt_runtime", cfg.run.frt_runtime},
                            {"record_hidden", cfg.run.record_hidden}};
    json checks;
    if (cfg.checks.q_sharing_max) checks["q_sharing_max"] = *cfg.checks.q_sharing_max;
    if (cfg.checks.v_reg_max) checks["v_reg_max"] = *cfg.checks.v_reg_max;
    if (cfg.checks.i_max_overshoot) checks["i_max_overshoot"] = *cfg.checks.i_max_overshoot;
    checks["expect_unstable"] = cfg.checks.expect_unstable;
    checks["expect_overcurrent"] = cfg.checks.expect_overcurrent;
    checks["require_no_overcurrent"] = cfg.checks.require_no_overcurrent;
    if (cfg.checks.min_events) checks["min_events"] = *cfg.checks.min_events;
    cfg.effective["checks"] = checks;
    return cfg;
}

RunConfigFile load_run_config(const std::string& path,
                              const std::vector<std::string>& overrides)
{
    return run_config_from_json(load_json_file(path), overrides);
}

}  // namespace spikegrid

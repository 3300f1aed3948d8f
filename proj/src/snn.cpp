#include "spikegrid/snn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace spikegrid {

namespace {

bool finite(double x) { return std::isfinite(x); }

double surrogate(double x, double slope)
{
    return 0.5 * (1.0 + slope * x / (1.0 + slope * std::fabs(x)));
}

double surrogate_deriv(double x, double slope)
{
    const double d = 1.0 + slope * std::fabs(x);
    return slope / (2.0 * d * d);
}

struct LayerCoeffs {
    double a_decay;          // 1 - dt/tau_decay
    double a_rise;           // 1 - dt/tau_rise
    double cnorm;            // kernel peak normalization
    double one_minus_alpha;  // 1 - dt/tau_m
    double drive;            // dt/(tau_m*g_l)
    double alpha_vrest;      // (dt/tau_m)*v_rest
    double v_th;
    double v_reset;
    double slope;
    bool spiking;
};

LayerCoeffs coeffs_for(const SnnLayer& l, double surrogate_slope, double cnorm)
{
    const double alpha = l.lif.dt / l.lif.tau_m;
    return LayerCoeffs{
        1.0 - l.lif.dt / l.kernel.tau_decay,
        1.0 - l.lif.dt / l.kernel.tau_rise,
        cnorm,
        1.0 - alpha,
        alpha / l.lif.g_l,
        alpha * l.lif.v_rest,
        l.lif.v_th,
        l.lif.v_reset,
        surrogate_slope,
        l.spiking,
    };
}

// Spiking layers use the peak-normalized kernel: one spike deflects the
// membrane by at most the weight. The readout normalizes by the kernel's
// discrete area instead, so it tracks presynaptic rates and its trained
// weights stay order one, commensurate with the hidden layers. A peak
// scale there puts the readout two orders below everything else and
// uniform optimizer steps swamp it.
double layer_cnorm(const SnnLayer& l)
{
    if (l.spiking) return l.kernel.peak_norm();
    return l.lif.dt / (l.kernel.tau_decay - l.kernel.tau_rise);
}

LayerCoeffs coeffs_for(const SnnLayer& l, double surrogate_slope)
{
    return coeffs_for(l, surrogate_slope, layer_cnorm(l));
}

struct LayerStepOut {
    std::size_t nz_pre = 0;  // presynaptic nonzero count this step
    std::size_t fired = 0;   // emitted spikes (s != 0)
};

// One layer, one timestep. `in_buf` is caller scratch of size n_out. When
// `v_pre_out` is given the pre-reset membrane is recorded there (needed by
// the backward pass; the in-place state only keeps the post-reset value).
LayerStepOut step_layer(const SnnLayer& l, const LayerCoeffs& c, LayerState& st,
                        const double* pre, SpikeMode mode, double* in_buf,
                        double* v_pre_out = nullptr)
{
    const std::size_t n = l.n_out;
    std::fill(in_buf, in_buf + n, 0.0);
    LayerStepOut out;
    for (std::size_t j = 0; j < l.n_in; ++j) {
        const double p = pre[j];
        if (p == 0.0) continue;
        ++out.nz_pre;
        const double* col = l.w.data() + j * n;
        if (p == 1.0) {
            for (std::size_t i = 0; i < n; ++i) in_buf[i] += col[i];
        } else {
            for (std::size_t i = 0; i < n; ++i) in_buf[i] += col[i] * p;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double e1 = st.e_decay[i] * c.a_decay + in_buf[i];
        const double e2 = st.e_rise[i] * c.a_rise + in_buf[i];
        st.e_decay[i] = e1;
        st.e_rise[i] = e2;
        const double i_syn = c.cnorm * (e1 - e2);
        const double v_pre = st.v[i] * c.one_minus_alpha + c.alpha_vrest + c.drive * i_syn;
        if (v_pre_out) v_pre_out[i] = v_pre;
        if (!c.spiking) {
            st.v[i] = v_pre;
            st.s[i] = v_pre;  // readout layer exposes the membrane
            continue;
        }
        double s;
        if (mode == SpikeMode::Hard) {
            s = (v_pre >= c.v_th) ? 1.0 : 0.0;
        } else {
            s = surrogate(v_pre - c.v_th, c.slope);
        }
        st.v[i] = v_pre * (1.0 - s) + c.v_reset * s;
        st.s[i] = s;
        if (s != 0.0) ++out.fired;
    }
    return out;
}

// Per-layer traces captured during a training forward pass, step-major:
// value(k, i) = buf[k*n + i].
struct SegCache {
    std::vector<std::vector<double>> v_pre;
    std::vector<std::vector<double>> s;
};

std::vector<LayerState> fresh_states(const std::vector<SnnLayer>& layers)
{
    std::vector<LayerState> st(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        st[l].e_decay.assign(layers[l].n_out, 0.0);
        st[l].e_rise.assign(layers[l].n_out, 0.0);
        st[l].v.assign(layers[l].n_out, 0.0);
        st[l].s.assign(layers[l].n_out, 0.0);
    }
    return st;
}

// Forward over steps [k0, k1). Advances `st` in place; optionally fills a
// training cache and/or an inference trace.
void run_forward(const SnnModel& m, const SpikeTrain& input, std::size_t k0, std::size_t k1,
                 std::vector<LayerState>& st, SpikeMode mode, SegCache* cache,
                 ForwardTrace* trace, bool record_first_hidden)
{
    const auto& layers = m.layers();
    std::vector<LayerCoeffs> cf;
    cf.reserve(layers.size());
    std::size_t max_w = m.n_in();
    for (const auto& l : layers) {
        cf.push_back(coeffs_for(l, m.config().surrogate_slope));
        max_w = std::max(max_w, l.n_out);
    }
    std::vector<double> in_act(m.n_in());
    std::vector<double> scratch(max_w);

    const std::size_t nsteps = k1 - k0;
    if (cache) {
        cache->v_pre.assign(layers.size(), {});
        cache->s.assign(layers.size(), {});
        for (std::size_t l = 0; l < layers.size(); ++l) {
            cache->v_pre[l].resize(nsteps * layers[l].n_out);
            cache->s[l].resize(nsteps * layers[l].n_out);
        }
    }
    if (trace) {
        trace->u.assign(m.n_out(), std::vector<double>(nsteps));
        trace->layer_spikes.assign(layers.size(), 0);
        trace->active_per_step.assign(nsteps, 0);
        if (record_first_hidden)
            trace->first_hidden_raster =
                SpikeTrain(layers.front().n_out, nsteps, input.dt(),
                           input.t0() + static_cast<double>(k0) * input.dt());
    }

    for (std::size_t k = k0; k < k1; ++k) {
        const std::size_t kk = k - k0;
        std::uint32_t active = 0;
        for (std::size_t ch = 0; ch < m.n_in(); ++ch) {
            const bool bit = input.at(ch, k);
            in_act[ch] = bit ? 1.0 : 0.0;
            active += bit ? 1u : 0u;
        }
        const double* pre = in_act.data();
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::size_t n = layers[l].n_out;
            double* vp_row = cache ? cache->v_pre[l].data() + kk * n : nullptr;
            const auto res = step_layer(layers[l], cf[l], st[l], pre, mode,
                                        scratch.data(), vp_row);
            if (cache)
                std::memcpy(cache->s[l].data() + kk * n, st[l].s.data(),
                            n * sizeof(double));
            if (cf[l].spiking) {
                active += (res.nz_pre > 0) ? static_cast<std::uint32_t>(n)
                                           : static_cast<std::uint32_t>(res.fired);
            } else if (res.nz_pre > 0) {
                active += static_cast<std::uint32_t>(n);
            }
            if (trace) {
                if (cf[l].spiking) trace->layer_spikes[l] += res.fired;
                if (record_first_hidden && l == 0)
                    for (std::size_t i = 0; i < n; ++i)
                        if (st[l].s[i] != 0.0) trace->first_hidden_raster.set(i, kk, true);
            }
            pre = st[l].s.data();
        }
        if (trace) {
            trace->active_per_step[kk] = active;
            for (std::size_t i = 0; i < m.n_out(); ++i)
                trace->u[i][kk] = st.back().s[i];
        }
    }
}

// Backward over one cached segment. Accumulates weight gradients into `g`
// (not zeroed here) and returns the segment MSE. Truncated at the segment
// boundary: no gradient flows into the pre-segment state.
// rate_floor/rate_penalty add a homeostatic term to the gradients only: a
// hidden layer whose mean firing rate sinks below the floor gets pushed back
// up. Silence is an absorbing state under plain MSE descent (no spikes, no
// readout gradient), so the floor keeps that basin repulsive. The returned
// loss stays pure MSE.
double run_backward(const SnnModel& m, const SpikeTrain& input, std::size_t k0,
                    std::size_t k1, const SegCache& cache,
                    const std::vector<std::vector<double>>& target, GradientBuffers& g,
                    double rate_floor = 0.0, double rate_penalty = 0.0)
{
    const auto& layers = m.layers();
    const std::size_t nl = layers.size();
    const std::size_t nsteps = k1 - k0;
    const std::size_t n_out_net = layers.back().n_out;
    const double loss_scale = 1.0 / (static_cast<double>(n_out_net) * static_cast<double>(nsteps));

    double loss = 0.0;
    {
        const auto& u = cache.s[nl - 1];  // readout s == membrane
        for (std::size_t k = 0; k < nsteps; ++k)
            for (std::size_t i = 0; i < n_out_net; ++i) {
                const double d = u[k * n_out_net + i] - target[i][k0 + k];
                loss += d * d;
            }
        loss *= loss_scale;
    }

    std::vector<double> gs_above;  // spike adjoints from the layer above, step-major
    for (std::size_t li = nl; li-- > 0;) {
        const SnnLayer& l = layers[li];
        const LayerCoeffs c = coeffs_for(l, m.config().surrogate_slope);
        const std::size_t n = l.n_out;
        const std::size_t n_in = l.n_in;
        std::vector<double> gs_below;
        if (li > 0) gs_below.assign(nsteps * n_in, 0.0);

        std::vector<double> gE1(n, 0.0), gE2(n, 0.0), carry(n, 0.0), gin(n, 0.0);
        double* gw = g.w[li].data();
        const double* s_prev_buf = (li > 0) ? cache.s[li - 1].data() : nullptr;

        for (std::size_t k = nsteps; k-- > 0;) {
            const double* vp = cache.v_pre[li].data() + k * n;
            const double* sv = cache.s[li].data() + k * n;
            for (std::size_t i = 0; i < n; ++i) {
                double gvp;
                if (!c.spiking) {
                    const double gu =
                        2.0 * (sv[i] - target[i][k0 + k]) * loss_scale;
                    gvp = gu + carry[i];
                } else {
                    const double x = vp[i] - c.v_th;
                    const double sp = surrogate_deriv(x, c.slope);
                    const double gs_tot =
                        gs_above[k * n + i] + carry[i] * (c.v_reset - vp[i]);
                    gvp = carry[i] * (1.0 - sv[i]) + gs_tot * sp;
                }
                const double gi = gvp * c.drive;
                const double ge1 = gE1[i] + c.cnorm * gi;
                const double ge2 = gE2[i] - c.cnorm * gi;
                gin[i] = ge1 + ge2;
                gE1[i] = ge1 * c.a_decay;
                gE2[i] = ge2 * c.a_rise;
                carry[i] = gvp * c.one_minus_alpha;
            }
            for (std::size_t j = 0; j < n_in; ++j) {
                const double p = (li > 0) ? s_prev_buf[k * n_in + j]
                                          : (input.at(j, k0 + k) ? 1.0 : 0.0);
                if (p != 0.0) {
                    double* col = gw + j * n;
                    if (p == 1.0) {
                        for (std::size_t i = 0; i < n; ++i) col[i] += gin[i];
                    } else {
                        for (std::size_t i = 0; i < n; ++i) col[i] += gin[i] * p;
                    }
                }
            }
            if (li > 0) {
                const double* w = l.w.data();
                double* gsb = gs_below.data() + k * n_in;
                for (std::size_t j = 0; j < n_in; ++j) {
                    const double* col = w + j * n;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) acc += col[i] * gin[i];
                    gsb[j] = acc;
                }
            }
        }
        gs_above = std::move(gs_below);
    }
    return loss;
}

void zero_grads(const SnnModel& m, GradientBuffers& g)
{
    g.w.resize(m.layers().size());
    for (std::size_t l = 0; l < m.layers().size(); ++l)
        g.w[l].assign(m.layers()[l].w.size(), 0.0);
}

}  // namespace

void LifParams::validate() const
{
    if (!finite(tau_m) || tau_m <= 0.0) throw std::invalid_argument("lif: tau_m must be positive");
    if (!finite(g_l) || g_l <= 0.0) throw std::invalid_argument("lif: g_l must be positive");
    if (!finite(dt) || dt <= 0.0) throw std::invalid_argument("lif: dt must be positive");
    if (dt >= tau_m / 5.0) throw std::invalid_argument("lif: dt too coarse, need dt < tau_m/5");
    if (!finite(v_th) || !finite(v_rest) || !finite(v_reset))
        throw std::invalid_argument("lif: potentials must be finite");
    if (v_reset > v_th) throw std::invalid_argument("lif: v_reset must not exceed v_th");
}

LifStepResult lif_step(double v, double i_syn, const LifParams& p)
{
    const double alpha = p.dt / p.tau_m;
    const double v_next = v * (1.0 - alpha) + alpha * (p.v_rest + i_syn / p.g_l);
    if (v_next >= p.v_th) return {p.v_reset, true};
    return {v_next, false};
}

double RcEquivalence::charge_step(double q, double i_syn, const LifParams& p) const
{
    const double alpha = p.dt / tau_rc;
    return q * (1.0 - alpha)
           + alpha * (capacitance * p.v_rest + capacitance * i_syn / p.g_l);
}

RcEquivalence rc_map(const LifParams& p, double capacitance)
{
    p.validate();
    if (!finite(capacitance) || capacitance <= 0.0)
        throw std::invalid_argument("rc_map: capacitance must be positive");
    return RcEquivalence{p.tau_m / capacitance, capacitance, p.tau_m};
}

void SynapseKernel::validate() const
{
    if (!finite(tau_rise) || !finite(tau_decay) || tau_rise <= 0.0 || tau_decay <= tau_rise)
        throw std::invalid_argument("kernel: need 0 < tau_rise < tau_decay");
}

double SynapseKernel::peak_norm() const
{
    const double t_peak = std::log(tau_decay / tau_rise) * tau_decay * tau_rise
                          / (tau_decay - tau_rise);
    const double peak = std::exp(-t_peak / tau_decay) - std::exp(-t_peak / tau_rise);
    return 1.0 / peak;
}

void LayerState::reset()
{
    std::fill(e_decay.begin(), e_decay.end(), 0.0);
    std::fill(e_rise.begin(), e_rise.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    std::fill(s.begin(), s.end(), 0.0);
}

void TrainingBatch::validate(std::size_t n_in, std::size_t n_out) const
{
    if (input.channels() != n_in) throw std::invalid_argument("batch: input channel count mismatch");
    if (input.steps() == 0) throw std::invalid_argument("batch: empty input");
    if (target.size() != n_out) throw std::invalid_argument("batch: target channel count mismatch");
    for (const auto& row : target)
        if (row.size() != input.steps())
            throw std::invalid_argument("batch: target length mismatch");
}

SnnModel SnnModel::build(const SnnConfig& cfg)
{
    if (cfg.layer_sizes.size() < 2)
        throw std::invalid_argument("snn: need at least input and output layers");
    for (std::size_t n : cfg.layer_sizes)
        if (n == 0) throw std::invalid_argument("snn: zero-width layer");
    if (cfg.surrogate_slope <= 0.0)
        throw std::invalid_argument("snn: surrogate slope must be positive");
    SynapseKernel kernel{cfg.tau_rise, cfg.tau_decay};
    kernel.validate();
    if (cfg.dt > cfg.tau_rise / 2.0)
        throw std::invalid_argument("snn: dt too coarse for kernel rise time");

    SnnModel m;
    m.cfg_ = cfg;
    std::mt19937_64 rng(cfg.seed);
    const std::size_t nl = cfg.layer_sizes.size() - 1;
    for (std::size_t l = 0; l < nl; ++l) {
        SnnLayer layer;
        layer.n_in = cfg.layer_sizes[l];
        layer.n_out = cfg.layer_sizes[l + 1];
        layer.spiking = (l + 1 != nl);
        layer.kernel = kernel;
        layer.lif = LifParams{layer.spiking ? cfg.tau_m_hidden : cfg.tau_m_output,
                              cfg.v_th, cfg.g_l, cfg.v_rest, cfg.v_reset, cfg.dt};
        layer.lif.validate();
        layer.w.resize(layer.n_in * layer.n_out);
        std::normal_distribution<double> dist(
            0.0, cfg.init_gain / std::sqrt(static_cast<double>(layer.n_in)));
        for (double& w : layer.w) w = dist(rng);
        m.layers_.push_back(std::move(layer));
    }
    return m;
}

std::size_t SnnModel::total_neurons() const
{
    return std::accumulate(cfg_.layer_sizes.begin(), cfg_.layer_sizes.end(), std::size_t{0});
}

ForwardTrace SnnModel::forward(const SpikeTrain& input, SpikeMode mode,
                               bool record_first_hidden) const
{
    if (input.channels() != n_in())
        throw std::invalid_argument("forward: input channel count mismatch");
    auto st = fresh_states(layers_);
    ForwardTrace trace;
    run_forward(*this, input, 0, input.steps(), st, mode, nullptr, &trace,
                record_first_hidden);
    return trace;
}

double SnnModel::loss_and_gradient(const TrainingBatch& batch, SpikeMode mode,
                                   GradientBuffers& grads) const
{
    batch.validate(n_in(), n_out());
    zero_grads(*this, grads);
    auto st = fresh_states(layers_);
    SegCache cache;
    run_forward(*this, batch.input, 0, batch.input.steps(), st, mode, &cache,
                nullptr, false);
    return run_backward(*this, batch.input, 0, batch.input.steps(), cache,
                        batch.target, grads);
}

double SnnModel::mse(const TrainingBatch& batch, SpikeMode mode) const
{
    batch.validate(n_in(), n_out());
    const ForwardTrace tr = forward(batch.input, mode);
    double acc = 0.0;
    const std::size_t T = batch.input.steps();
    for (std::size_t i = 0; i < n_out(); ++i)
        for (std::size_t k = 0; k < T; ++k) {
            const double d = tr.u[i][k] - batch.target[i][k];
            acc += d * d;
        }
    return acc / (static_cast<double>(n_out()) * static_cast<double>(T));
}

namespace {

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::uint64_t t = 0;

    void init(const SnnModel& model)
    {
        m.resize(model.layers().size());
        v.resize(model.layers().size());
        for (std::size_t l = 0; l < model.layers().size(); ++l) {
            m[l].assign(model.layers()[l].w.size(), 0.0);
            v[l].assign(model.layers()[l].w.size(), 0.0);
        }
    }

    void step(SnnModel& model, const GradientBuffers& g, const TrainOptions& opt,
              double lr)
    {
        ++t;
        const double b1 = opt.adam_beta1, b2 = opt.adam_beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (std::size_t l = 0; l < model.layers().size(); ++l) {
            auto& w = model.layers()[l].w;
            const auto& gw = g.w[l];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[l][i] = b1 * m[l][i] + (1.0 - b1) * gw[i];
                v[l][i] = b2 * v[l][i] + (1.0 - b2) * gw[i] * gw[i];
                const double mhat = m[l][i] / bc1;
                const double vhat = v[l][i] / bc2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + opt.adam_eps);
            }
        }
    }
};

void write_divergence_snapshot(const std::string& path, const SnnModel& model,
                               std::size_t epoch, std::size_t batch_idx,
                               std::size_t seg_start, double loss)
{
    if (path.empty()) return;
    nlohmann::json j;
    j["reason"] = "training divergence";
    j["epoch"] = epoch;
    j["batch"] = batch_idx;
    j["segment_start_step"] = seg_start;
    j["loss"] = finite(loss) ? loss : -1.0;
    j["loss_finite"] = finite(loss);
    nlohmann::json norms = nlohmann::json::array();
    nlohmann::json maxima = nlohmann::json::array();
    for (const auto& l : model.layers()) {
        double n2 = 0.0, mx = 0.0;
        for (double w : l.w) {
            n2 += w * w;
            mx = std::max(mx, std::fabs(w));
        }
        norms.push_back(std::sqrt(n2));
        maxima.push_back(mx);
    }
    j["layer_w_norm"] = norms;
    j["layer_w_max"] = maxima;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

}  // namespace

TrainResult train(SnnModel& model, const std::vector<TrainingBatch>& data,
                  const TrainOptions& opt)
{
    if (data.empty()) throw std::invalid_argument("train: no batches");
    if (opt.segment_len == 0) throw std::invalid_argument("train: segment_len must be positive");
    for (const auto& b : data) b.validate(model.n_in(), model.n_out());

    AdamState adam;
    adam.init(model);
    GradientBuffers grads;
    TrainResult result;
    std::mt19937_64 order_rng(opt.seed);

    std::vector<std::size_t> batch_order(data.size());
    std::iota(batch_order.begin(), batch_order.end(), 0);

    const std::size_t epochs = opt.online_single_pass ? 1 : opt.epochs;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const double lr_epoch =
            opt.lr * std::pow(opt.lr_decay, static_cast<double>(epoch));
        if (opt.shuffle_segments && !opt.online_single_pass)
            std::shuffle(batch_order.begin(), batch_order.end(), order_rng);
        double loss_acc = 0.0;
        std::size_t step_acc = 0;
        for (std::size_t bi : batch_order) {
            const TrainingBatch& batch = data[bi];
            auto st = fresh_states(model.layers());
            const std::size_t T = batch.input.steps();
            // Cold kernel and membrane state cannot match an ongoing target;
            // run the warmup span forward only so its mismatch neither trains
            // the weights nor lands in the reported loss.
            const std::size_t warm = std::min(opt.warmup_steps, T);
            if (warm > 0)
                run_forward(model, batch.input, 0, warm, st, opt.mode, nullptr,
                            nullptr, false);
            // Segments run in order so membrane and kernel state carries
            // across boundaries; gradients stay truncated per segment.
            for (std::size_t k0 = warm; k0 < T; k0 += opt.segment_len) {
                const std::size_t k1 = std::min(T, k0 + opt.segment_len);
                SegCache cache;
                run_forward(model, batch.input, k0, k1, st, opt.mode, &cache,
                            nullptr, false);
                zero_grads(model, grads);
                const double seg_loss = run_backward(model, batch.input, k0, k1,
                                                     cache, batch.target, grads);
                if (!finite(seg_loss) || seg_loss > opt.divergence_limit) {
                    write_divergence_snapshot(opt.snapshot_path, model, epoch, bi,
                                              k0, seg_loss);
                    result.diverged = true;
                    result.final_loss = seg_loss;
                    return result;
                }
                // Surrogate gradients burst when many membranes sit near the
                // threshold at once; an uncapped burst runs through Adam's
                // fast first moment and can silence a layer for good.
                if (opt.grad_clip > 0.0) {
                    double n2 = 0.0;
                    for (const auto& gl : grads.w)
                        for (double gg : gl) n2 += gg * gg;
                    if (n2 > opt.grad_clip * opt.grad_clip) {
                        const double s = opt.grad_clip / std::sqrt(n2);
                        for (auto& gl : grads.w)
                            for (double& gg : gl) gg *= s;
                    }
                }
                adam.step(model, grads, opt, lr_epoch);
                loss_acc += seg_loss * static_cast<double>(k1 - k0);
                step_acc += k1 - k0;
            }
        }
        result.loss_history.push_back(loss_acc / static_cast<double>(step_acc));
    }
    result.final_loss = result.loss_history.empty() ? 0.0 : result.loss_history.back();
    if (!finite(result.final_loss)) result.diverged = true;
    return result;
}

TrainResult train_hebbian(SnnModel& model, const std::vector<TrainingBatch>& data,
                          const TrainOptions& opt)
{
    // Experimental correlation rule: hidden weights move with
    // pre-trace x post-spike coincidences minus a leak, the readout follows a
    // delta rule on the membrane error. Kept for comparison runs only.
    if (data.empty()) throw std::invalid_argument("train: no batches");
    for (const auto& b : data) b.validate(model.n_in(), model.n_out());

    auto& layers = model.layers();
    const std::size_t nl = layers.size();
    TrainResult result;

    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        double loss_acc = 0.0;
        std::size_t n_acc = 0;
        for (const auto& batch : data) {
            auto st = fresh_states(layers);
            std::vector<std::vector<double>> pre_trace(nl);
            std::vector<LayerCoeffs> cf;
            std::size_t max_w = model.n_in();
            for (std::size_t l = 0; l < nl; ++l) {
                pre_trace[l].assign(layers[l].n_in, 0.0);
                cf.push_back(coeffs_for(layers[l], model.config().surrogate_slope));
                max_w = std::max(max_w, layers[l].n_out);
            }
            std::vector<double> in_act(model.n_in());
            std::vector<double> scratch(max_w);
            const std::size_t T = batch.input.steps();
            for (std::size_t k = 0; k < T; ++k) {
                for (std::size_t ch = 0; ch < model.n_in(); ++ch)
                    in_act[ch] = batch.input.at(ch, k) ? 1.0 : 0.0;
                const double* pre = in_act.data();
                for (std::size_t l = 0; l < nl; ++l) {
                    auto& trace = pre_trace[l];
                    const double decay = cf[l].a_decay;
                    for (std::size_t j = 0; j < layers[l].n_in; ++j)
                        trace[j] = trace[j] * decay + pre[j];
                    step_layer(layers[l], cf[l], st[l], pre, SpikeMode::Hard,
                               scratch.data());
                    auto& w = layers[l].w;
                    const std::size_t n = layers[l].n_out;
                    if (l + 1 == nl) {
                        for (std::size_t i = 0; i < n; ++i) {
                            const double err = batch.target[i][k] - st[l].s[i];
                            loss_acc += err * err;
                            for (std::size_t j = 0; j < layers[l].n_in; ++j)
                                w[j * n + i] += opt.lr * err * trace[j];
                        }
                        n_acc += n;
                    } else {
                        for (std::size_t i = 0; i < n; ++i) {
                            if (st[l].s[i] == 0.0) continue;
                            for (std::size_t j = 0; j < layers[l].n_in; ++j) {
                                const std::size_t idx = j * n + i;
                                w[idx] += opt.lr * (trace[j] - 0.1 * w[idx]);
                            }
                        }
                    }
                    pre = st[l].s.data();
                }
            }
        }
        const double epoch_loss = loss_acc / static_cast<double>(n_acc);
        result.loss_history.push_back(epoch_loss);
        if (!finite(epoch_loss) || epoch_loss > opt.divergence_limit) {
            result.diverged = true;
            result.final_loss = epoch_loss;
            return result;
        }
    }
    result.final_loss = result.loss_history.empty() ? 0.0 : result.loss_history.back();
    return result;
}

namespace {

constexpr char kCkptMagic[8] = {'S', 'G', 'C', 'K', 'P', 'T', '0', '1'};

}  // namespace

void SnnModel::save(const std::string& path, const std::string& metadata_json) const
{
    nlohmann::json hdr;
    hdr["layer_sizes"] = cfg_.layer_sizes;
    hdr["dt"] = cfg_.dt;
    hdr["tau_m_hidden"] = cfg_.tau_m_hidden;
    hdr["tau_m_output"] = cfg_.tau_m_output;
    hdr["v_th"] = cfg_.v_th;
    hdr["v_rest"] = cfg_.v_rest;
    hdr["v_reset"] = cfg_.v_reset;
    hdr["g_l"] = cfg_.g_l;
    hdr["tau_rise"] = cfg_.tau_rise;
    hdr["tau_decay"] = cfg_.tau_decay;
    hdr["surrogate_slope"] = cfg_.surrogate_slope;
    hdr["init_gain"] = cfg_.init_gain;
    hdr["seed"] = cfg_.seed;
    hdr["metadata"] = nlohmann::json::parse(metadata_json);
    const std::string hs = hdr.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& l : layers_)
        out.write(reinterpret_cast<const char*>(l.w.data()),
                  static_cast<std::streamsize>(l.w.size() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

namespace {

nlohmann::json read_ckpt_header(std::ifstream& in, const std::string& path)
{
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || hlen == 0 || hlen > (1u << 20))
        throw std::runtime_error("checkpoint: bad header length in " + path);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
    return nlohmann::json::parse(hs);
}

}  // namespace

SnnModel SnnModel::load(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    const nlohmann::json hdr = read_ckpt_header(in, path);

    SnnConfig cfg;
    cfg.layer_sizes = hdr.at("layer_sizes").get<std::vector<std::size_t>>();
    cfg.dt = hdr.at("dt").get<double>();
    cfg.tau_m_hidden = hdr.at("tau_m_hidden").get<double>();
    cfg.tau_m_output = hdr.at("tau_m_output").get<double>();
    cfg.v_th = hdr.at("v_th").get<double>();
    cfg.v_rest = hdr.at("v_rest").get<double>();
    cfg.v_reset = hdr.at("v_reset").get<double>();
    cfg.g_l = hdr.at("g_l").get<double>();
    cfg.tau_rise = hdr.at("tau_rise").get<double>();
    cfg.tau_decay = hdr.at("tau_decay").get<double>();
    cfg.surrogate_slope = hdr.at("surrogate_slope").get<double>();
    cfg.init_gain = hdr.at("init_gain").get<double>();
    cfg.seed = hdr.at("seed").get<std::uint64_t>();

    SnnModel m = build(cfg);
    for (auto& l : m.layers_) {
        in.read(reinterpret_cast<char*>(l.w.data()),
                static_cast<std::streamsize>(l.w.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated weights in " + path);
    }
    return m;
}

std::string SnnModel::peek_metadata(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    const nlohmann::json hdr = read_ckpt_header(in, path);
    return hdr.value("metadata", nlohmann::json::object()).dump();
}

SnnRuntime::SnnRuntime(const SnnModel& model) : model_(&model)
{
    states_ = fresh_states(model.layers());
    std::size_t max_w = model.n_in();
    for (const auto& l : model.layers()) max_w = std::max(max_w, l.n_out);
    scratch_in_.resize(max_w + model.n_in());
    rebuild_coeffs();
}

void SnnRuntime::rebuild_coeffs()
{
    coeff_cache_.clear();
    for (const auto& l : model_->layers()) coeff_cache_.push_back(layer_cnorm(l));
}

void SnnRuntime::reset()
{
    for (auto& st : states_) st.reset();
    hidden_spike_total_ = 0;
}

void SnnRuntime::swap_model(const SnnModel& model)
{
    if (model.layers().size() != model_->layers().size())
        throw std::invalid_argument("swap_model: layer count mismatch");
    for (std::size_t l = 0; l < model.layers().size(); ++l)
        if (model.layers()[l].n_in != model_->layers()[l].n_in ||
            model.layers()[l].n_out != model_->layers()[l].n_out)
            throw std::invalid_argument("swap_model: layer shape mismatch");
    model_ = &model;
    rebuild_coeffs();
}

std::uint32_t SnnRuntime::step(const std::uint8_t* in_bits, double* u_out)
{
    const auto& layers = model_->layers();
    const std::size_t n_in = model_->n_in();
    double* in_act = scratch_in_.data();
    double* scratch = scratch_in_.data() + n_in;
    std::uint32_t active = 0;
    for (std::size_t ch = 0; ch < n_in; ++ch) {
        in_act[ch] = in_bits[ch] ? 1.0 : 0.0;
        active += in_bits[ch] ? 1u : 0u;
    }
    const double* pre = in_act;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerCoeffs c =
            coeffs_for(layers[l], model_->config().surrogate_slope, coeff_cache_[l]);
        const auto res = step_layer(layers[l], c, states_[l], pre, SpikeMode::Hard,
                                    scratch);
        const std::size_t n = layers[l].n_out;
        if (c.spiking) {
            active += (res.nz_pre > 0) ? static_cast<std::uint32_t>(n)
                                       : static_cast<std::uint32_t>(res.fired);
            hidden_spike_total_ += res.fired;
        } else if (res.nz_pre > 0) {
            active += static_cast<std::uint32_t>(n);
        }
        pre = states_[l].s.data();
    }
    for (std::size_t i = 0; i < model_->n_out(); ++i) u_out[i] = states_.back().s[i];
    return active;
}

void write_loss_csv(const std::string& path, const std::vector<double>& history)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("loss csv: cannot open " + path);
    out << "epoch,loss\n";
    for (std::size_t i = 0; i < history.size(); ++i)
        out << i << "," << history[i] << "\n";
}

}  // namespace spikegrid

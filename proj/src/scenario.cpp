#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "spikegrid/plant.hpp"

namespace spikegrid {

namespace {

constexpr cplx kJ{0.0, 1.0};

struct PwmAccum {
    std::array<std::uint64_t, 3> counts{};
    std::uint64_t n = 0;
    std::array<double, 3> m_abc{};  // last completed duty mapped to [-1, 1]
    bool has_duty = false;

    void reset()
    {
        counts = {};
        n = 0;
        has_duty = false;
    }
};

struct DatasetAccum {
    std::vector<std::array<std::uint8_t, 6>> bits;
    std::vector<std::array<double, 3>> targets;
    std::size_t k_start = 0;
    bool open = false;
};

void close_batch(DatasetAccum& acc, double dt, std::vector<TrainingBatch>& out)
{
    if (!acc.open || acc.bits.empty()) {
        acc = {};
        return;
    }
    TrainingBatch b;
    const std::size_t n = acc.bits.size();
    b.input = SpikeTrain(6, n, dt, static_cast<double>(acc.k_start) * dt);
    b.target.assign(3, std::vector<double>(n, 0.0));
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t j = 0; j < 6; ++j) b.input.set(j, k, acc.bits[k][j] != 0);
        for (std::size_t j = 0; j < 3; ++j) b.target[j][k] = acc.targets[k][j];
    }
    out.push_back(std::move(b));
    acc = {};
}

void dump_nonfinite(const std::string& path, double t, const char* phase)
{
    if (path.empty()) return;
    nlohmann::json j;
    j["reason"] = "non-finite plant state";
    j["phase"] = phase;
    j["t"] = t;
    std::ofstream os(path);
    if (os) os << j.dump(2) << '\n';
}

}  // namespace

RunArtifacts run_scenario(const Scenario& sc, const RunOptions& opt)
{
    sc.validate();
    const std::size_t n_conv = sc.topology.converters.size();
    const bool snn_mode = opt.controller == Controller::Snn;
    if (snn_mode) {
        if (!opt.model)
            throw std::invalid_argument("run_scenario: snn controller needs a model");
        if (opt.model->n_in() != 6 || opt.model->n_out() != 3)
            throw std::invalid_argument("run_scenario: controller model must be 6-in 3-out");
        if (opt.adapted_model &&
            (opt.adapted_model->n_in() != 6 || opt.adapted_model->n_out() != 3))
            throw std::invalid_argument("run_scenario: adapted model must be 6-in 3-out");
    }
    if (opt.decimation == 0)
        throw std::invalid_argument("run_scenario: decimation must be >= 1");

    Topology topo = sc.topology;  // scheduled disturbances mutate this copy
    const double dt = sc.dt;
    const double omega0 = sc.base.omega0();
    Network net(topo, omega0);
    PlantState st = net.initial_state();

    const auto steps_run = static_cast<std::size_t>(std::llround(sc.t_end / dt));
    const auto steps_settle = static_cast<std::size_t>(std::llround(sc.t_settle / dt));
    const std::size_t n_carrier = sc.carrier.steps_per_period(dt);

    std::vector<VsgState> vsg(n_conv);
    VsgGlobals globals;
    std::vector<EventGate> gates;
    gates.reserve(n_conv);
    for (std::size_t c = 0; c < n_conv; ++c)
        gates.emplace_back(sc.sampling.window_len, sc.sampling.thresholds,
                           sc.sampling.holdoff);

    std::vector<cplx> emf(n_conv, cplx{0.0, 0.0});
    std::vector<cplx> m_hold(n_conv, cplx{0.0, 0.0});

    RunArtifacts art;
    art.events.resize(n_conv);
    art.activity.dt = dt;
    art.activity.active.reserve(steps_run);
    art.activity.status.reserve(steps_run);

    auto sample_of = [&](std::size_t c, const std::vector<cplx>& v_all, double t) {
        const Converter& cv = topo.converters[c];
        DqSample s;
        s.v_d = v_all[cv.bus].real();
        s.v_q = v_all[cv.bus].imag();
        s.i_d = st.i_f[c].real();
        s.i_q = st.i_f[c].imag();
        s.t = t;
        return s;
    };
    auto update_globals = [&](const std::vector<cplx>& v_all) {
        if (n_conv == 0) return;
        double sum_v = 0.0, sum_q = 0.0, sum_w = 0.0;
        for (std::size_t c = 0; c < n_conv; ++c) {
            sum_v += std::abs(v_all[topo.converters[c].bus]);
            sum_q += vsg[c].q_f / topo.converters[c].s_rated;
            sum_w += vsg[c].omega;
        }
        const double n = static_cast<double>(n_conv);
        globals.avg_v_mag = sum_v / n;
        globals.avg_q_pu = sum_q / n;
        globals.z_f += dt * topo.converters[0].vsg.g_sec_f * (1.0 - sum_w / n);
    };

    // Settle under direct VSG control; the run starts from its end state.
    for (std::size_t k = 0; k < steps_settle; ++k) {
        const double t = -static_cast<double>(steps_settle - k) * dt;
        const std::vector<cplx> v_all = net.bus_voltages(st, emf);
        update_globals(v_all);
        for (std::size_t c = 0; c < n_conv; ++c) {
            const Converter& cv = topo.converters[c];
            const cplx v_c = v_all[cv.bus];
            const cplx i_o = st.i_f[c] - kJ * cv.b_f * v_c;
            const VsgOutput out =
                vsg_reference(vsg[c], cv, v_c, st.i_f[c], i_o, globals, dt, omega0);
            emf[c] = out.m * cv.v_dc;
            m_hold[c] = out.m;
            if (k + sc.sampling.window_len >= steps_settle)
                gates[c].prime(sample_of(c, v_all, t));
        }
        net.step(st, emf, dt);
        if (!st.finite()) {
            dump_nonfinite(opt.divergence_dump, t, "settle");
            art.summary.diverged = true;
            return art;
        }
    }
    st.t = 0.0;

    std::vector<SnnRuntime> runtimes;
    if (snn_mode) {
        runtimes.reserve(n_conv);
        for (std::size_t c = 0; c < n_conv; ++c) runtimes.emplace_back(*opt.model);
        art.encoder_spikes = SpikeTrain(6 * n_conv, steps_run, dt, 0.0);
        if (opt.record_hidden && opt.model->config().layer_sizes.size() > 2)
            art.hidden_raster =
                SpikeTrain(opt.model->config().layer_sizes[1], steps_run, dt, 0.0);
    } else if (opt.record_dataset) {
        art.encoder_spikes = SpikeTrain(6 * n_conv, steps_run, dt, 0.0);
    }

    std::vector<PwmAccum> pwm(n_conv);
    std::vector<DatasetAccum> ds(n_conv);
    std::vector<GateStatus> prev_status(n_conv, GateStatus::Idle);
    std::vector<bool> frt_engaged(n_conv, false);
    bool reconfig_pending = false;

    // Metric window: fixed offset past the first disturbance, else the tail.
    double w0, w1;
    if (!sc.schedule.empty()) {
        const double t1 = sc.schedule.front().t;
        if (t1 + 0.50 <= sc.t_end) {
            w0 = t1 + 0.35;
            w1 = t1 + 0.50;
        } else {
            w0 = std::max(0.0, sc.t_end - 0.15);
            w1 = sc.t_end;
        }
    } else {
        w0 = 0.8 * sc.t_end;
        w1 = sc.t_end;
    }
    art.summary.metric_window_begin = w0;
    art.summary.metric_window_end = w1;
    double q_err_sum = 0.0, v_avg_sum = 0.0;
    std::uint64_t metric_steps = 0;

    std::size_t next_dist = 0;
    double ov_time = 0.0;
    double enc[6];
    std::uint8_t bits[6];
    std::vector<double> u(3, 0.0);
    // Bumpless transfer: a freshly woken network ramps from quiet state, so
    // handing it the plant instantly would drop the EMF to zero. The applied
    // modulation fades from the held value to the network command instead.
    constexpr double kEngageBlend = 10e-3;
    std::vector<double> engage_t0(n_conv, -1e9);
    std::vector<cplx> m_engage(n_conv);

    for (std::size_t k = 0; k < steps_run; ++k) {
        const double t = static_cast<double>(k) * dt;
        const double theta = omega0 * t;

        bool disturbed_now = false;
        while (next_dist < sc.schedule.size() && sc.schedule[next_dist].t <= t + 1e-12) {
            const Disturbance& d = sc.schedule[next_dist];
            switch (d.kind) {
                case DisturbanceKind::LoadStep:
                    topo.buses[d.target].g_load = d.magnitude;
                    break;
                case DisturbanceKind::GridSag: {
                    cplx& vg = topo.buses[d.target].v_grid;
                    const double mag = std::abs(vg);
                    vg = mag > 0.0 ? vg * (d.magnitude / mag) : cplx{d.magnitude, 0.0};
                    break;
                }
                case DisturbanceKind::LineOutage: {
                    topo.lines[d.target].closed = false;
                    // Zero the stranded current state; slot order matches the
                    // x > 0 lines in declaration order.
                    std::size_t slot = 0;
                    for (std::size_t l = 0; l < d.target; ++l)
                        if (topo.lines[l].x > 0.0) ++slot;
                    if (topo.lines[d.target].x > 0.0) st.i_line[slot] = cplx{0.0, 0.0};
                    reconfig_pending = true;
                    break;
                }
                case DisturbanceKind::ParamMismatch:
                    topo.converters[d.target].v_dc = d.magnitude;
                    reconfig_pending = true;
                    break;
            }
            disturbed_now = true;
            ++next_dist;
        }

        const std::vector<cplx> v_all = net.bus_voltages(st, emf);

        bool over_v = false;
        for (const cplx& v : v_all) {
            const double m = std::abs(v);
            art.summary.max_v_mag = std::max(art.summary.max_v_mag, m);
            if (m > 2.0) over_v = true;
        }
        ov_time = over_v ? ov_time + dt : 0.0;
        if (ov_time >= 0.05 - 0.5 * dt) art.summary.unstable = true;
        for (std::size_t c = 0; c < n_conv; ++c) {
            const double m = std::abs(st.i_f[c]);
            art.summary.max_i_mag = std::max(art.summary.max_i_mag, m);
            if (m > 1.02 * topo.converters[c].i_max) art.summary.overcurrent = true;
        }

        std::uint32_t active_total = 0;

        if (!snn_mode) {
            update_globals(v_all);
            for (std::size_t c = 0; c < n_conv; ++c) {
                const Converter& cv = topo.converters[c];
                const cplx v_c = v_all[cv.bus];
                const cplx i_o = st.i_f[c] - kJ * cv.b_f * v_c;
                const VsgOutput out =
                    vsg_reference(vsg[c], cv, v_c, st.i_f[c], i_o, globals, dt, omega0);
                if (out.saturated) ++art.summary.saturation_count;
                emf[c] = out.m * cv.v_dc;
                m_hold[c] = out.m;

                const auto fwd = gates[c].step(sample_of(c, v_all, t));
                if (fwd && opt.record_dataset) {
                    const AbcFrame av = dq_to_abc(v_c.real(), v_c.imag(), theta, t);
                    const AbcFrame ai =
                        dq_to_abc(st.i_f[c].real(), st.i_f[c].imag(), theta, t);
                    enc[0] = av.a * sc.encoding.scale_v;
                    enc[1] = av.b * sc.encoding.scale_v;
                    enc[2] = av.c * sc.encoding.scale_v;
                    enc[3] = ai.a * sc.encoding.scale_i;
                    enc[4] = ai.b * sc.encoding.scale_i;
                    enc[5] = ai.c * sc.encoding.scale_i;
                    const double tw = threshold_wave(t, sc.carrier);
                    for (std::size_t j = 0; j < 6; ++j) {
                        double x = enc[j];
                        if (x < -1.0 || x > 1.0) {
                            x = std::clamp(x, -1.0, 1.0);
                            ++art.summary.clamp_count;
                        }
                        bits[j] = x > tw ? 1 : 0;
                        art.encoder_spikes.set(6 * c + j, k, bits[j] != 0);
                    }
                    if (!ds[c].open) {
                        ds[c].open = true;
                        ds[c].k_start = k;
                    }
                    ds[c].bits.push_back(
                        {bits[0], bits[1], bits[2], bits[3], bits[4], bits[5]});
                    const AbcFrame am = dq_to_abc(out.m.real(), out.m.imag(), theta, t);
                    ds[c].targets.push_back({am.a, am.b, am.c});
                }
                const GateStatus now = gates[c].state().status;
                if (prev_status[c] == GateStatus::Active && now == GateStatus::Idle &&
                    opt.record_dataset)
                    close_batch(ds[c], dt, art.dataset);
                prev_status[c] = now;
            }
        } else {
            // Completed carrier periods latch a fresh duty before this step.
            if (k > 0 && k % n_carrier == 0) {
                PwmRow row;
                row.t = t;
                row.duty.resize(3 * n_conv);
                for (std::size_t c = 0; c < n_conv; ++c) {
                    if (pwm[c].n > 0) {
                        for (std::size_t j = 0; j < 3; ++j) {
                            const double duty = static_cast<double>(pwm[c].counts[j]) /
                                                static_cast<double>(pwm[c].n);
                            pwm[c].m_abc[j] = 2.0 * duty - 1.0;
                        }
                        pwm[c].counts = {};
                        pwm[c].n = 0;
                        pwm[c].has_duty = true;
                    }
                    if (pwm[c].has_duty) {
                        for (std::size_t j = 0; j < 3; ++j)
                            row.duty[3 * c + j] = 0.5 * (pwm[c].m_abc[j] + 1.0);
                    } else {
                        const AbcFrame am =
                            dq_to_abc(m_hold[c].real(), m_hold[c].imag(), theta, t);
                        row.duty[3 * c + 0] = 0.5 * (am.a + 1.0);
                        row.duty[3 * c + 1] = 0.5 * (am.b + 1.0);
                        row.duty[3 * c + 2] = 0.5 * (am.c + 1.0);
                    }
                }
                art.pwm.push_back(std::move(row));
            }

            std::vector<bool> forwarded(n_conv, false);
            bool any_active = false;
            for (std::size_t c = 0; c < n_conv; ++c) {
                const auto fwd = gates[c].step(sample_of(c, v_all, t));
                forwarded[c] = fwd.has_value();
                const GateStatus now = gates[c].state().status;
                if (prev_status[c] == GateStatus::Idle && now == GateStatus::Active) {
                    runtimes[c].reset();
                    pwm[c].reset();
                    engage_t0[c] = t;
                    m_engage[c] = m_hold[c];
                }
                if (prev_status[c] == GateStatus::Active && now == GateStatus::Idle)
                    pwm[c].reset();
                prev_status[c] = now;
                if (now == GateStatus::Active) any_active = true;
            }
            if (reconfig_pending && any_active && opt.adapted_model &&
                !art.summary.model_swapped) {
                for (std::size_t c = 0; c < n_conv; ++c) {
                    runtimes[c].swap_model(*opt.adapted_model);
                    engage_t0[c] = t;
                    m_engage[c] = m_hold[c];
                }
                art.summary.model_swapped = true;
            }

            const double tw = threshold_wave(t, sc.carrier);
            for (std::size_t c = 0; c < n_conv; ++c) {
                if (!forwarded[c]) continue;
                const Converter& cv = topo.converters[c];
                const cplx v_c = v_all[cv.bus];
                const AbcFrame av = dq_to_abc(v_c.real(), v_c.imag(), theta, t);
                const AbcFrame ai =
                    dq_to_abc(st.i_f[c].real(), st.i_f[c].imag(), theta, t);
                enc[0] = av.a * sc.encoding.scale_v;
                enc[1] = av.b * sc.encoding.scale_v;
                enc[2] = av.c * sc.encoding.scale_v;
                enc[3] = ai.a * sc.encoding.scale_i;
                enc[4] = ai.b * sc.encoding.scale_i;
                enc[5] = ai.c * sc.encoding.scale_i;
                for (std::size_t j = 0; j < 6; ++j) {
                    double x = enc[j];
                    if (x < -1.0 || x > 1.0) {
                        x = std::clamp(x, -1.0, 1.0);
                        ++art.summary.clamp_count;
                    }
                    bits[j] = x > tw ? 1 : 0;
                    art.encoder_spikes.set(6 * c + j, k, bits[j] != 0);
                }
                active_total += runtimes[c].step(bits, u.data());
                for (std::size_t j = 0; j < 3; ++j)
                    if (u[j] > tw) ++pwm[c].counts[j];
                ++pwm[c].n;
                if (opt.record_hidden && c == 0 && art.hidden_raster.channels() > 0) {
                    const std::vector<double>& h = runtimes[0].first_hidden();
                    for (std::size_t j = 0; j < art.hidden_raster.channels(); ++j)
                        art.hidden_raster.set(j, k, h[j] > 0.5);
                }
            }

            for (std::size_t c = 0; c < n_conv; ++c) {
                const Converter& cv = topo.converters[c];
                if (prev_status[c] == GateStatus::Active && pwm[c].has_duty) {
                    const AbcFrame am{pwm[c].m_abc[0], pwm[c].m_abc[1], pwm[c].m_abc[2],
                                      t};
                    const DqPair mdq = abc_to_dq(am, theta);
                    const cplx m_cmd{mdq.d, mdq.q};
                    const double lam =
                        std::clamp((t - engage_t0[c]) / kEngageBlend, 0.0, 1.0);
                    m_hold[c] = (1.0 - lam) * m_engage[c] + lam * m_cmd;
                }
                emf[c] = m_hold[c] * cv.v_dc;
            }
        }

        if (opt.frt_runtime) {
            for (std::size_t c = 0; c < n_conv; ++c) {
                const Converter& cv = topo.converters[c];
                const double mag = std::abs(st.i_f[c]);
                if (!frt_engaged[c] && mag >= 0.97 * cv.i_max)
                    frt_engaged[c] = true;
                else if (frt_engaged[c] && mag < 0.90 * cv.i_max)
                    frt_engaged[c] = false;
                if (!frt_engaged[c] || mag < 1e-9) continue;
                const cplx i = st.i_f[c];
                const cplx i_tgt = i * (0.95 * cv.i_max / mag);
                const double tau = 5.0 * dt;
                cplx e = v_all[cv.bus] + cv.r_f * i + kJ * cv.x_f * i +
                         (cv.x_f / omega0) * (i_tgt - i) / tau;
                const double em = std::abs(e);
                if (em > cv.v_dc) e *= cv.v_dc / em;
                emf[c] = e;
            }
        }

        std::uint8_t status_or = 0;
        for (std::size_t c = 0; c < n_conv; ++c)
            if (gates[c].state().status == GateStatus::Active) status_or = 1;
        art.activity.active.push_back(active_total);
        art.activity.status.push_back(status_or);

        if (k % opt.decimation == 0) {
            TraceRow row;
            row.t = t;
            row.v_bus = v_all;
            row.i_f = st.i_f;
            row.m.resize(n_conv);
            row.p.resize(n_conv);
            row.q.resize(n_conv);
            row.omega.resize(n_conv);
            for (std::size_t c = 0; c < n_conv; ++c) {
                const Converter& cv = topo.converters[c];
                row.m[c] = emf[c] / cv.v_dc;
                const cplx v_c = v_all[cv.bus];
                const cplx i = st.i_f[c];
                row.p[c] = v_c.real() * i.real() + v_c.imag() * i.imag();
                row.q[c] = v_c.imag() * i.real() - v_c.real() * i.imag();
                row.omega[c] = vsg[c].omega;
            }
            row.status = status_or;
            row.active_neurons = active_total;
            art.rows.push_back(std::move(row));
        }

        if (t >= w0 && t <= w1) {
            if (n_conv >= 2) {
                double qmax = 0.0;
                for (std::size_t a = 0; a < n_conv; ++a) {
                    const cplx va = v_all[topo.converters[a].bus];
                    const cplx ia = st.i_f[a];
                    const double qa =
                        (va.imag() * ia.real() - va.real() * ia.imag()) /
                        topo.converters[a].s_rated;
                    for (std::size_t b2 = a + 1; b2 < n_conv; ++b2) {
                        const cplx vb = v_all[topo.converters[b2].bus];
                        const cplx ib = st.i_f[b2];
                        const double qb =
                            (vb.imag() * ib.real() - vb.real() * ib.imag()) /
                            topo.converters[b2].s_rated;
                        qmax = std::max(qmax, std::abs(qa - qb));
                    }
                }
                q_err_sum += qmax;
            }
            double v_sum = 0.0;
            std::size_t nb = 0;
            for (std::size_t b2 = 0; b2 < topo.buses.size(); ++b2) {
                if (topo.buses[b2].grid) continue;
                v_sum += std::abs(v_all[b2]);
                ++nb;
            }
            if (nb > 0) v_avg_sum += v_sum / static_cast<double>(nb);
            ++metric_steps;
        }

        const PlantPowers pw0 = net.powers(st, emf);
        net.step(st, emf, dt);
        if (!st.finite()) {
            dump_nonfinite(opt.divergence_dump, t, "run");
            art.summary.diverged = true;
            break;
        }
        if (!disturbed_now) {
            const PlantPowers pw1 = net.powers(st, emf);
            const double pn0 = pw0.p_source - pw0.p_load - pw0.p_loss;
            const double pn1 = pw1.p_source - pw1.p_load - pw1.p_loss;
            const double res =
                (pw1.e_stored - pw0.e_stored) - 0.5 * dt * (pn0 + pn1);
            const double rel =
                std::abs(res) / (dt * std::max(1.0, std::abs(pw0.p_source)));
            art.summary.max_balance_residual =
                std::max(art.summary.max_balance_residual, rel);
        }
    }

    for (std::size_t c = 0; c < n_conv; ++c) {
        gates[c].flush();
        art.events[c] = gates[c].events();
        art.summary.n_events += art.events[c].size();
        art.summary.forwarded_samples += gates[c].total_forwarded();
        if (opt.record_dataset) close_batch(ds[c], dt, art.dataset);
    }
    for (auto& rt : runtimes) art.summary.hidden_spikes += rt.hidden_spike_total();
    if (metric_steps > 0) {
        art.summary.q_sharing_err = q_err_sum / static_cast<double>(metric_steps);
        // Secondary-control objective: the average of the bus voltage
        // magnitudes settles at nominal. Ripple is not the regulated quantity.
        art.summary.v_reg_err =
            std::abs(v_avg_sum / static_cast<double>(metric_steps) - 1.0);
    }
    if (snn_mode) {
        const auto& sizes = opt.model->config().layer_sizes;
        std::size_t hidden = 0;
        for (std::size_t i = 1; i + 1 < sizes.size(); ++i) hidden += sizes[i];
        art.activity.total_neurons = n_conv * opt.model->total_neurons();
        art.activity.state_neurons = n_conv * hidden;
    }
    return art;
}

}  // namespace spikegrid

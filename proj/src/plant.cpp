#include "spikegrid/plant.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace spikegrid {

namespace {

constexpr cplx kJ{0.0, 1.0};

bool fin(double x) { return std::isfinite(x); }
bool fin(cplx z) { return fin(z.real()) && fin(z.imag()); }

double effective_b(const Topology& topo, std::size_t bus)
{
    double b = topo.buses[bus].b_shunt;
    for (const auto& c : topo.converters)
        if (c.bus == bus) b += c.b_f;
    return b;
}

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n)
    {
        std::iota(parent.begin(), parent.end(), std::size_t{0});
    }
    std::size_t find(std::size_t a)
    {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

void check_connected(const Topology& topo, const std::vector<bool>& line_closed,
                     const char* when)
{
    if (topo.buses.size() < 2) return;
    UnionFind uf(topo.buses.size());
    for (std::size_t l = 0; l < topo.lines.size(); ++l)
        if (line_closed[l]) uf.unite(topo.lines[l].from, topo.lines[l].to);
    const std::size_t root = uf.find(0);
    for (std::size_t b = 1; b < topo.buses.size(); ++b)
        if (uf.find(b) != root)
            throw std::invalid_argument(std::string("topology: network disconnected ") + when);
}

}  // namespace

cplx frt_limit(cplx i_ref, double i_max)
{
    if (!(i_max > 0.0) || !fin(i_max))
        throw std::invalid_argument("frt_limit: i_max must be positive");
    const double mag = std::abs(i_ref);
    if (mag <= i_max) return i_ref;
    return i_ref * (i_max / mag);
}

VsgOutput vsg_reference(VsgState& state, const Converter& conv, cplx v_c, cplx i_f,
                        cplx i_o, const VsgGlobals& globals, double dt, double omega0)
{
    const VsgParams& p = conv.vsg;
    const double pm = v_c.real() * i_f.real() + v_c.imag() * i_f.imag();
    const double qm = v_c.imag() * i_f.real() - v_c.real() * i_f.imag();
    state.p_f += dt * p.omega_filt * (pm - state.p_f);
    state.q_f += dt * p.omega_filt * (qm - state.q_f);

    const double p_in = p.p_ref + globals.z_f;
    state.omega += dt * (p_in - state.p_f - p.d_p * (state.omega - 1.0)) / (2.0 * p.h);
    state.delta += dt * (state.omega - 1.0) * omega0;

    state.z_v += dt * p.g_sec_v * (1.0 - globals.avg_v_mag);
    state.z_q += dt * p.g_sec_q * (globals.avg_q_pu - state.q_f / conv.s_rated);

    const double e_ref = p.e0 + p.k_q * (p.q_ref - state.q_f) + state.z_v + state.z_q;
    const cplx v_ref = e_ref * cplx(std::cos(state.delta), std::sin(state.delta));

    VsgOutput out;
    cplx i_ref = i_o + p.k_v * (v_ref - v_c);
    if (p.frt_on_targets) {
        const double mag = std::abs(i_ref);
        if (mag > conv.i_max) {
            i_ref *= conv.i_max / mag;
            out.frt_active = true;
        }
    }
    const cplx e_cmd = v_c + p.k_i * (i_ref - i_f) + kJ * conv.x_f * i_f;
    cplx m = e_cmd / conv.v_dc;
    const double mm = std::abs(m);
    if (mm > 1.0) {
        m /= mm;
        out.saturated = true;
    }
    out.m = m;
    return out;
}

void Topology::validate(const std::vector<Disturbance>& schedule) const
{
    if (buses.empty()) throw std::invalid_argument("topology: no buses");
    for (const auto& b : buses) {
        if (b.g_load < 0.0 || !fin(b.g_load))
            throw std::invalid_argument("topology: negative load conductance");
        if (b.b_shunt < 0.0 || !fin(b.b_shunt))
            throw std::invalid_argument("topology: negative shunt susceptance");
        if (b.grid && !fin(b.v_grid))
            throw std::invalid_argument("topology: non-finite grid voltage");
    }
    for (const auto& l : lines) {
        if (l.from >= buses.size() || l.to >= buses.size() || l.from == l.to)
            throw std::invalid_argument("topology: bad line endpoints");
        if (l.r < 0.0 || l.x < 0.0 || l.r + l.x <= 0.0)
            throw std::invalid_argument("topology: line needs positive impedance");
        if (l.x == 0.0 && l.r <= 0.0)
            throw std::invalid_argument("topology: resistive line needs r > 0");
    }
    for (const auto& c : converters) {
        if (c.bus >= buses.size()) throw std::invalid_argument("topology: bad converter bus");
        if (buses[c.bus].grid)
            throw std::invalid_argument("topology: converter on a grid bus");
        if (c.x_f <= 0.0 || c.r_f < 0.0 || c.b_f < 0.0)
            throw std::invalid_argument("topology: bad converter filter");
        if (c.s_rated <= 0.0 || c.v_dc <= 0.0 || c.i_max <= 0.0)
            throw std::invalid_argument("topology: bad converter ratings");
        if (effective_b(*this, c.bus) <= 0.0)
            throw std::invalid_argument("topology: converter bus needs capacitance");
    }
    // Algebraic buses must have a resistive path to solve for.
    for (std::size_t b = 0; b < buses.size(); ++b) {
        if (buses[b].grid || effective_b(*this, b) > 0.0) continue;
        bool anchored = buses[b].g_load > 0.0;
        for (const auto& l : lines)
            if (l.x == 0.0 && (l.from == b || l.to == b)) anchored = true;
        if (!anchored)
            throw std::invalid_argument("topology: floating algebraic bus " + buses[b].name);
    }

    std::vector<bool> closed(lines.size());
    for (std::size_t l = 0; l < lines.size(); ++l) closed[l] = lines[l].closed;
    check_connected(*this, closed, "initially");
    for (const auto& d : schedule) {
        switch (d.kind) {
            case DisturbanceKind::LoadStep:
                if (d.target >= buses.size())
                    throw std::invalid_argument("schedule: load_step bus out of range");
                if (d.magnitude < 0.0 || d.magnitude > 100.0 || !fin(d.magnitude))
                    throw std::invalid_argument("schedule: load_step magnitude out of bounds");
                break;
            case DisturbanceKind::GridSag:
                if (d.target >= buses.size() || !buses[d.target].grid)
                    throw std::invalid_argument("schedule: grid_sag target is not a grid bus");
                if (d.magnitude < 0.0 || d.magnitude > 2.0)
                    throw std::invalid_argument("schedule: grid_sag magnitude out of bounds");
                break;
            case DisturbanceKind::LineOutage:
                if (d.target >= lines.size())
                    throw std::invalid_argument("schedule: line_outage line out of range");
                closed[d.target] = false;
                check_connected(*this, closed, "after scheduled outage");
                break;
            case DisturbanceKind::ParamMismatch:
                if (d.target >= converters.size())
                    throw std::invalid_argument("schedule: param_mismatch converter out of range");
                if (!(d.magnitude > 0.0) || d.magnitude > 10.0)
                    throw std::invalid_argument("schedule: param_mismatch v_dc out of bounds");
                break;
        }
    }
}

void Scenario::validate() const
{
    if (!(dt > 0.0) || dt > 1.0000001e-5)
        throw std::invalid_argument("scenario: dt must be positive and at most 10 us");
    if (!(t_end > 0.0)) throw std::invalid_argument("scenario: t_end must be positive");
    if (t_settle < 0.0) throw std::invalid_argument("scenario: t_settle must be >= 0");
    for (const auto& d : schedule)
        if (!(d.t > 0.0) || d.t >= t_end)
            throw std::invalid_argument("scenario: schedule times must lie inside (0, t_end)");
    for (std::size_t i = 1; i < schedule.size(); ++i)
        if (schedule[i].t < schedule[i - 1].t)
            throw std::invalid_argument("scenario: schedule must be time-sorted");
    carrier.steps_per_period(dt);  // validates commensurability
    if (sampling.window_len < 2)
        throw std::invalid_argument("scenario: sampling window too short");
    sampling.thresholds.validate();
    if (!(encoding.scale_v > 0.0) || !(encoding.scale_i > 0.0))
        throw std::invalid_argument("scenario: encoder scales must be positive");
    topology.validate(schedule);
}

bool PlantState::finite() const
{
    for (cplx z : v_bus)
        if (!fin(z)) return false;
    for (cplx z : i_line)
        if (!fin(z)) return false;
    for (cplx z : i_f)
        if (!fin(z)) return false;
    return true;
}

Network::Network(const Topology& topo, double omega0) : topo_(&topo), omega0_(omega0)
{
    rebuild();
}

void Network::set_topology(const Topology& topo)
{
    topo_ = &topo;
    rebuild();
}

void Network::rebuild()
{
    const Topology& t = *topo_;
    dyn_index_.assign(t.buses.size(), -1);
    alg_index_.assign(t.buses.size(), -1);
    int nd = 0, na = 0;
    for (std::size_t b = 0; b < t.buses.size(); ++b) {
        if (t.buses[b].grid) continue;
        if (effective_b(t, b) > 0.0)
            dyn_index_[b] = nd++;
        else
            alg_index_[b] = na++;
    }
    dyn_lines_.clear();
    static_lines_.clear();
    for (std::size_t l = 0; l < t.lines.size(); ++l) {
        if (t.lines[l].x > 0.0)
            dyn_lines_.push_back(l);
        else
            static_lines_.push_back(l);
    }
}

PlantState Network::initial_state() const
{
    PlantState st;
    int nd = 0;
    for (int i : dyn_index_)
        if (i >= 0) ++nd;
    st.v_bus.assign(static_cast<std::size_t>(nd), cplx{1.0, 0.0});
    st.i_line.assign(dyn_lines_.size(), cplx{0.0, 0.0});
    st.i_f.assign(topo_->converters.size(), cplx{0.0, 0.0});
    return st;
}

void Network::solve_algebraic(const PlantState& st, const std::vector<cplx>&,
                              std::vector<cplx>& v_all) const
{
    const Topology& t = *topo_;
    v_all.assign(t.buses.size(), cplx{0.0, 0.0});
    std::size_t n_alg = 0;
    for (std::size_t b = 0; b < t.buses.size(); ++b) {
        if (t.buses[b].grid)
            v_all[b] = t.buses[b].v_grid;
        else if (dyn_index_[b] >= 0)
            v_all[b] = st.v_bus[static_cast<std::size_t>(dyn_index_[b])];
        else
            ++n_alg;
    }
    if (n_alg == 0) return;

    // G v = i for the algebraic buses; loads and resistive lines build G,
    // inductive line and converter currents land on the right-hand side.
    std::vector<cplx> a(n_alg * n_alg, cplx{0.0, 0.0});
    std::vector<cplx> rhs(n_alg, cplx{0.0, 0.0});
    auto slot = [&](std::size_t bus) { return static_cast<std::size_t>(alg_index_[bus]); };

    for (std::size_t b = 0; b < t.buses.size(); ++b) {
        if (alg_index_[b] < 0) continue;
        const std::size_t k = slot(b);
        a[k * n_alg + k] += t.buses[b].g_load;
    }
    for (std::size_t li : static_lines_) {
        const Line& l = t.lines[li];
        if (!l.closed) continue;
        const double y = 1.0 / l.r;
        const bool fa = alg_index_[l.from] >= 0;
        const bool ta = alg_index_[l.to] >= 0;
        if (fa) {
            const std::size_t k = slot(l.from);
            a[k * n_alg + k] += y;
            if (ta)
                a[k * n_alg + slot(l.to)] -= y;
            else
                rhs[k] += y * v_all[l.to];
        }
        if (ta) {
            const std::size_t k = slot(l.to);
            a[k * n_alg + k] += y;
            if (fa)
                a[k * n_alg + slot(l.from)] -= y;
            else
                rhs[k] += y * v_all[l.from];
        }
    }
    for (std::size_t di = 0; di < dyn_lines_.size(); ++di) {
        const Line& l = t.lines[dyn_lines_[di]];
        if (!l.closed) continue;
        const cplx i = st.i_line[di];
        if (alg_index_[l.to] >= 0) rhs[slot(l.to)] += i;
        if (alg_index_[l.from] >= 0) rhs[slot(l.from)] -= i;
    }
    // Converters always sit on dynamic buses; nothing to add here.

    // Gaussian elimination with partial pivoting; n_alg stays tiny.
    std::vector<std::size_t> perm(n_alg);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t col = 0; col < n_alg; ++col) {
        std::size_t piv = col;
        double best = std::abs(a[perm[col] * n_alg + col]);
        for (std::size_t r = col + 1; r < n_alg; ++r) {
            const double v = std::abs(a[perm[r] * n_alg + col]);
            if (v > best) {
                best = v;
                piv = r;
            }
        }
        if (best < 1e-12)
            throw std::runtime_error("network: singular algebraic system");
        std::swap(perm[col], perm[piv]);
        const std::size_t pr = perm[col];
        for (std::size_t r = col + 1; r < n_alg; ++r) {
            const std::size_t rr = perm[r];
            const cplx f = a[rr * n_alg + col] / a[pr * n_alg + col];
            if (f == cplx{0.0, 0.0}) continue;
            for (std::size_t c2 = col; c2 < n_alg; ++c2)
                a[rr * n_alg + c2] -= f * a[pr * n_alg + c2];
            rhs[rr] -= f * rhs[pr];
        }
    }
    std::vector<cplx> x(n_alg);
    for (std::size_t col = n_alg; col-- > 0;) {
        const std::size_t pr = perm[col];
        cplx acc = rhs[pr];
        for (std::size_t c2 = col + 1; c2 < n_alg; ++c2) acc -= a[pr * n_alg + c2] * x[c2];
        x[col] = acc / a[pr * n_alg + col];
    }
    for (std::size_t b = 0; b < t.buses.size(); ++b)
        if (alg_index_[b] >= 0) v_all[b] = x[slot(b)];
}

std::vector<cplx> Network::bus_voltages(const PlantState& st,
                                        const std::vector<cplx>& emf) const
{
    std::vector<cplx> v_all;
    solve_algebraic(st, emf, v_all);
    return v_all;
}

void Network::derivatives(const PlantState& st, const std::vector<cplx>& emf,
                          PlantState& dst) const
{
    const Topology& t = *topo_;
    std::vector<cplx> v_all;
    solve_algebraic(st, emf, v_all);

    dst.v_bus.assign(st.v_bus.size(), cplx{0.0, 0.0});
    dst.i_line.assign(st.i_line.size(), cplx{0.0, 0.0});
    dst.i_f.assign(st.i_f.size(), cplx{0.0, 0.0});

    std::vector<cplx> inj(t.buses.size(), cplx{0.0, 0.0});

    for (std::size_t c = 0; c < t.converters.size(); ++c) {
        const Converter& cv = t.converters[c];
        const cplx i = st.i_f[c];
        dst.i_f[c] =
            (omega0_ / cv.x_f) * (emf[c] - v_all[cv.bus] - cv.r_f * i) - kJ * omega0_ * i;
        inj[cv.bus] += i;
    }
    for (std::size_t di = 0; di < dyn_lines_.size(); ++di) {
        const Line& l = t.lines[dyn_lines_[di]];
        const cplx i = st.i_line[di];
        if (!l.closed) {
            dst.i_line[di] = cplx{0.0, 0.0};
            continue;
        }
        dst.i_line[di] =
            (omega0_ / l.x) * (v_all[l.from] - v_all[l.to] - l.r * i) - kJ * omega0_ * i;
        inj[l.from] -= i;
        inj[l.to] += i;
    }
    for (std::size_t li : static_lines_) {
        const Line& l = t.lines[li];
        if (!l.closed) continue;
        const cplx i = (v_all[l.from] - v_all[l.to]) / l.r;
        inj[l.from] -= i;
        inj[l.to] += i;
    }
    for (std::size_t b = 0; b < t.buses.size(); ++b) {
        if (dyn_index_[b] < 0) continue;
        const std::size_t k = static_cast<std::size_t>(dyn_index_[b]);
        const cplx v = st.v_bus[k];
        const cplx i_net = inj[b] - t.buses[b].g_load * v;
        dst.v_bus[k] = (omega0_ / effective_b(t, b)) * i_net - kJ * omega0_ * v;
    }
}

namespace {

void axpy_state(PlantState& out, const PlantState& base, double a, const PlantState& k)
{
    out.v_bus.resize(base.v_bus.size());
    out.i_line.resize(base.i_line.size());
    out.i_f.resize(base.i_f.size());
    for (std::size_t i = 0; i < base.v_bus.size(); ++i)
        out.v_bus[i] = base.v_bus[i] + a * k.v_bus[i];
    for (std::size_t i = 0; i < base.i_line.size(); ++i)
        out.i_line[i] = base.i_line[i] + a * k.i_line[i];
    for (std::size_t i = 0; i < base.i_f.size(); ++i)
        out.i_f[i] = base.i_f[i] + a * k.i_f[i];
}

}  // namespace

void Network::step(PlantState& st, const std::vector<cplx>& emf, double dt) const
{
    if (emf.size() != topo_->converters.size())
        throw std::invalid_argument("network: emf count mismatch");
    if (!(dt > 0.0) || dt > 1.0000001e-5)
        throw std::invalid_argument("network: dt must be positive and at most 10 us");
    PlantState k1, k2, k3, k4, tmp;
    derivatives(st, emf, k1);
    axpy_state(tmp, st, dt / 2.0, k1);
    derivatives(tmp, emf, k2);
    axpy_state(tmp, st, dt / 2.0, k2);
    derivatives(tmp, emf, k3);
    axpy_state(tmp, st, dt, k3);
    derivatives(tmp, emf, k4);
    for (std::size_t i = 0; i < st.v_bus.size(); ++i)
        st.v_bus[i] += dt / 6.0 * (k1.v_bus[i] + 2.0 * k2.v_bus[i] + 2.0 * k3.v_bus[i] + k4.v_bus[i]);
    for (std::size_t i = 0; i < st.i_line.size(); ++i)
        st.i_line[i] +=
            dt / 6.0 * (k1.i_line[i] + 2.0 * k2.i_line[i] + 2.0 * k3.i_line[i] + k4.i_line[i]);
    for (std::size_t i = 0; i < st.i_f.size(); ++i)
        st.i_f[i] += dt / 6.0 * (k1.i_f[i] + 2.0 * k2.i_f[i] + 2.0 * k3.i_f[i] + k4.i_f[i]);
    st.t += dt;
}

PlantPowers Network::powers(const PlantState& st, const std::vector<cplx>& emf) const
{
    const Topology& t = *topo_;
    std::vector<cplx> v_all;
    solve_algebraic(st, emf, v_all);

    PlantPowers p;
    for (std::size_t c = 0; c < t.converters.size(); ++c) {
        const Converter& cv = t.converters[c];
        const cplx i = st.i_f[c];
        p.p_source += emf[c].real() * i.real() + emf[c].imag() * i.imag();
        p.p_loss += cv.r_f * std::norm(i);
        p.e_stored += cv.x_f / (2.0 * omega0_) * std::norm(i);
    }
    for (std::size_t di = 0; di < dyn_lines_.size(); ++di) {
        const Line& l = t.lines[dyn_lines_[di]];
        if (!l.closed) continue;
        p.p_loss += l.r * std::norm(st.i_line[di]);
        p.e_stored += l.x / (2.0 * omega0_) * std::norm(st.i_line[di]);
    }
    for (std::size_t li : static_lines_) {
        const Line& l = t.lines[li];
        if (!l.closed) continue;
        p.p_loss += std::norm(v_all[l.from] - v_all[l.to]) / l.r;
    }
    for (std::size_t b = 0; b < t.buses.size(); ++b) {
        p.p_load += t.buses[b].g_load * std::norm(v_all[b]);
        if (dyn_index_[b] >= 0)
            p.e_stored += effective_b(t, b) / (2.0 * omega0_) *
                          std::norm(st.v_bus[static_cast<std::size_t>(dyn_index_[b])]);
        if (t.buses[b].grid) {
            // Net current into the grid bus counts as load-side absorption.
            cplx i_in{0.0, 0.0};
            for (std::size_t di = 0; di < dyn_lines_.size(); ++di) {
                const Line& l = t.lines[dyn_lines_[di]];
                if (!l.closed) continue;
                if (l.to == b) i_in += st.i_line[di];
                if (l.from == b) i_in -= st.i_line[di];
            }
            for (std::size_t li : static_lines_) {
                const Line& l = t.lines[li];
                if (!l.closed) continue;
                if (l.to == b) i_in += (v_all[l.from] - v_all[l.to]) / l.r;
                if (l.from == b) i_in -= (v_all[l.from] - v_all[l.to]) / l.r;
            }
            p.p_load += v_all[b].real() * i_in.real() + v_all[b].imag() * i_in.imag();
        }
    }
    return p;
}

}  // namespace spikegrid

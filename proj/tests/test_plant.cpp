#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "spikegrid/plant.hpp"

using namespace spikegrid;

namespace {

const double kOmega0 = 100.0 * std::acos(-1.0);

Topology island_pair()
{
    Topology t;
    t.buses.resize(3);
    t.buses[0].name = "pcc1";
    t.buses[1].name = "pcc2";
    t.buses[2].name = "load";
    t.buses[2].g_load = 0.45;
    t.lines.push_back({0, 2, 0.04, 0.12, true});
    t.lines.push_back({1, 2, 0.04, 0.12, true});
    Converter c;
    c.bus = 0;
    t.converters.push_back(c);
    c.bus = 1;
    t.converters.push_back(c);
    return t;
}

Scenario island_scenario()
{
    Scenario sc;
    sc.name = "island-pair";
    sc.topology = island_pair();
    sc.t_settle = 0.6;
    sc.t_end = 0.25;
    return sc;
}

}  // namespace

TEST_CASE("current clamp preserves the vector angle")
{
    CHECK(frt_limit(cplx{2.0, 0.0}, 1.2) == cplx{1.2, 0.0});
    CHECK(frt_limit(cplx{0.3, -0.4}, 1.2) == cplx{0.3, -0.4});  // under the limit

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    for (int k = 0; k < 200; ++k) {
        const cplx i{u(rng), u(rng)};
        const cplx out = frt_limit(i, 1.1);
        CHECK(std::abs(out) <= 1.1 + 1e-12);
        if (std::abs(i) > 1.1) {
            CHECK(std::abs(out) == doctest::Approx(1.1).epsilon(1e-12));
            // Collinear and same direction.
            const double cross = i.real() * out.imag() - i.imag() * out.real();
            const double dot = i.real() * out.real() + i.imag() * out.imag();
            CHECK(std::abs(cross) < 1e-12 * std::abs(i));
            CHECK(dot > 0.0);
        }
    }
    CHECK_THROWS_AS(frt_limit(cplx{1.0, 0.0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(frt_limit(cplx{1.0, 0.0}, -2.0), std::invalid_argument);
}

TEST_CASE("controller update at its own equilibrium is a fixed point")
{
    Converter conv;  // defaults: p_ref 0.25, e0 1.02, k_v 2, k_i 0.5, x_f 0.15
    VsgState st;
    st.p_f = 0.25;
    VsgGlobals glob;  // avg_v 1, avg_q 0, z_f 0

    const cplx v_c{1.0, 0.0};
    const cplx i_f{0.25, 0.0};
    const VsgOutput out = vsg_reference(st, conv, v_c, i_f, i_f, glob, 1e-5, kOmega0);

    CHECK(st.omega == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(st.delta == 0.0);
    CHECK(st.p_f == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(st.q_f == 0.0);
    CHECK(st.z_v == 0.0);
    CHECK(st.z_q == 0.0);

    // e_ref = 1.02; i_ref = 0.25 + 2*(1.02-1) = 0.29;
    // e_cmd = 1 + 0.5*0.04 + j*0.15*0.25 = 1.02 + j0.0375; m = e_cmd/1.25
    CHECK(out.m.real() == doctest::Approx(1.02 / 1.25).epsilon(1e-12));
    CHECK(out.m.imag() == doctest::Approx(0.0375 / 1.25).epsilon(1e-12));
    CHECK_FALSE(out.saturated);
    CHECK_FALSE(out.frt_active);
}

TEST_CASE("controller flags saturation and target-side current limiting")
{
    Converter conv;
    VsgState st;
    VsgGlobals glob;
    // Far-off terminal voltage drives i_ref beyond i_max and e_cmd beyond v_dc.
    const VsgOutput out =
        vsg_reference(st, conv, cplx{5.0, 0.0}, cplx{2.5, 0.0}, cplx{2.5, 0.0}, glob,
                      1e-5, kOmega0);
    CHECK(out.frt_active);
    CHECK(out.saturated);
    CHECK(std::abs(out.m) == doctest::Approx(1.0).epsilon(1e-12));

    Converter open = conv;
    open.vsg.frt_on_targets = false;
    VsgState st2;
    const VsgOutput out2 =
        vsg_reference(st2, open, cplx{5.0, 0.0}, cplx{2.5, 0.0}, cplx{2.5, 0.0}, glob,
                      1e-5, kOmega0);
    CHECK_FALSE(out2.frt_active);
}

TEST_CASE("single algebraic bus solves the resistive divider")
{
    Topology t;
    t.buses.resize(2);
    t.buses[0].grid = true;
    t.buses[1].g_load = 4.0;
    t.lines.push_back({0, 1, 0.1, 0.0, true});
    t.validate({});

    Network net(t, kOmega0);
    const PlantState st = net.initial_state();
    CHECK(st.v_bus.empty());
    CHECK(st.i_line.empty());
    const auto v = net.bus_voltages(st, {});
    REQUIRE(v.size() == 2);
    CHECK(v[0] == cplx{1.0, 0.0});
    // (v_g - v)/r = g v  =>  v = (1/r) / (g + 1/r)
    CHECK(v[1].real() == doctest::Approx(10.0 / 14.0).epsilon(1e-12));
    CHECK(v[1].imag() == doctest::Approx(0.0));
}

TEST_CASE("chained algebraic buses match a direct two-node solve")
{
    Topology t;
    t.buses.resize(3);
    t.buses[0].grid = true;
    t.buses[0].v_grid = cplx{0.98, 0.05};
    t.buses[1].g_load = 1.7;
    t.buses[2].g_load = 0.6;
    t.lines.push_back({0, 1, 0.08, 0.0, true});
    t.lines.push_back({1, 2, 0.22, 0.0, true});
    t.validate({});

    Network net(t, kOmega0);
    const auto v = net.bus_voltages(net.initial_state(), {});

    // Node equations: (g1 + y1 + y2) v1 - y2 v2 = y1 vg; -y2 v1 + (g2 + y2) v2 = 0
    const double y1 = 1.0 / 0.08, y2 = 1.0 / 0.22;
    const double a11 = 1.7 + y1 + y2, a12 = -y2, a21 = -y2, a22 = 0.6 + y2;
    const cplx b1 = y1 * cplx{0.98, 0.05};
    const double det = a11 * a22 - a12 * a21;
    const cplx v1 = (b1 * a22) / det;
    const cplx v2 = (-a21 * b1) / det;
    CHECK(std::abs(v[1] - v1) < 1e-12);
    CHECK(std::abs(v[2] - v2) < 1e-12);
}

TEST_CASE("isolated resistive island trips the singular-system guard")
{
    Topology t;
    t.buses.resize(3);
    t.buses[0].grid = true;
    t.lines.push_back({0, 1, 0.0, 0.1, true});   // inductive feed
    t.lines.push_back({1, 2, 0.05, 0.0, true});  // resistive pair, no ground path
    Network net(t, kOmega0);
    const PlantState st = net.initial_state();
    CHECK_THROWS_AS(net.bus_voltages(st, {}), std::runtime_error);
}

TEST_CASE("inductive line between stiff sources follows the closed form")
{
    Topology t;
    t.buses.resize(2);
    t.buses[0].grid = true;
    t.buses[0].v_grid = cplx{1.0, 0.0};
    t.buses[1].grid = true;
    t.buses[1].v_grid = cplx{0.5, 0.2};
    const double r = 0.04, x = 0.12;
    t.lines.push_back({0, 1, r, x, true});

    Network net(t, kOmega0);
    PlantState st = net.initial_state();
    REQUIRE(st.i_line.size() == 1);

    // (x/w0) di/dt = dv - r i - j x i  with dv constant:
    //   i(t) = i_ss + (i0 - i_ss) exp(-a t),  a = w0 r / x + j w0
    const cplx dv = cplx{1.0, 0.0} - cplx{0.5, 0.2};
    const cplx i_ss = dv / cplx{r, x};
    const cplx a{kOmega0 * r / x, kOmega0};

    // Decay constant w0 r/x is about 105 per second; 60 ms covers six time
    // constants, enough for the gap to shrink below 0.05 from |i_ss| ~ 4.3.
    const double dt = 1e-5;
    for (int k = 1; k <= 6000; ++k) {
        net.step(st, {}, dt);
        const double tt = static_cast<double>(k) * dt;
        const cplx ref = i_ss + (-i_ss) * std::exp(-a * tt);
        REQUIRE(std::abs(st.i_line[0] - ref) < 1e-9);
    }
    CHECK(std::abs(st.i_line[0] - i_ss) < 0.05);
}

TEST_CASE("stored energy tracks net power through a transient")
{
    const Topology t = island_pair();
    Network net(t, kOmega0);
    PlantState st = net.initial_state();
    const std::vector<cplx> emf{cplx{1.05, 0.02}, cplx{1.05, 0.02}};

    const double dt = 1e-5;
    double worst = 0.0;
    PlantPowers pw0 = net.powers(st, emf);
    for (int k = 0; k < 5000; ++k) {
        net.step(st, emf, dt);
        const PlantPowers pw1 = net.powers(st, emf);
        const double pn0 = pw0.p_source - pw0.p_load - pw0.p_loss;
        const double pn1 = pw1.p_source - pw1.p_load - pw1.p_loss;
        const double res = (pw1.e_stored - pw0.e_stored) - 0.5 * dt * (pn0 + pn1);
        worst = std::max(worst,
                         std::abs(res) / (dt * std::max(1.0, std::abs(pw0.p_source))));
        pw0 = pw1;
    }
    // Trapezoid vs RK4 disagree at O(dt^3) during the cold-start transient;
    // 1e-3 of a step's energy throughput is the bookkeeping bound used by the
    // scenario runner as well.
    CHECK(worst < 1e-3);
    CHECK(pw0.p_source > 0.0);
    CHECK(pw0.p_load > 0.0);
    CHECK(pw0.e_stored > 0.0);
}

TEST_CASE("topology validation rejects broken descriptions")
{
    {
        Topology t = island_pair();
        t.lines[0].to = 9;
        CHECK_THROWS_AS(t.validate({}), std::invalid_argument);
    }
    {
        Topology t = island_pair();
        t.buses[0].grid = true;  // converter 0 sits there
        CHECK_THROWS_AS(t.validate({}), std::invalid_argument);
    }
    {
        Topology t = island_pair();
        t.converters[0].b_f = 0.0;  // no capacitance at the converter bus
        CHECK_THROWS_AS(t.validate({}), std::invalid_argument);
    }
    {
        Topology t = island_pair();
        t.lines.pop_back();  // bus 1 left dangling
        CHECK_THROWS_AS(t.validate({}), std::invalid_argument);
    }
    {
        // Dyn-line-only algebraic bus with no load has nothing to solve against.
        Topology t;
        t.buses.resize(2);
        t.buses[0].grid = true;
        t.lines.push_back({0, 1, 0.04, 0.12, true});
        CHECK_THROWS_AS(t.validate({}), std::invalid_argument);
    }
    {
        Topology t = island_pair();
        std::vector<Disturbance> sched{{0.1, DisturbanceKind::LineOutage, 0, 0.0}};
        // Removing line 0 strands bus 0.
        CHECK_THROWS_AS(t.validate(sched), std::invalid_argument);
    }
    {
        Topology t = island_pair();
        std::vector<Disturbance> sched{{0.1, DisturbanceKind::GridSag, 2, 0.5}};
        CHECK_THROWS_AS(t.validate(sched), std::invalid_argument);  // not a grid bus
    }
    {
        Topology t = island_pair();
        std::vector<Disturbance> sched{{0.1, DisturbanceKind::ParamMismatch, 0, 0.0}};
        CHECK_THROWS_AS(t.validate(sched), std::invalid_argument);  // v_dc must be > 0
    }
}

TEST_CASE("scenario validation pins the numerics contract")
{
    Scenario sc = island_scenario();
    CHECK_NOTHROW(sc.validate());

    Scenario bad = sc;
    bad.dt = 2e-5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = sc;
    bad.schedule.push_back({sc.t_end, DisturbanceKind::LoadStep, 2, 0.9});
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = sc;
    bad.schedule.push_back({0.2, DisturbanceKind::LoadStep, 2, 0.9});
    bad.schedule.push_back({0.1, DisturbanceKind::LoadStep, 2, 0.5});
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);  // unsorted

    bad = sc;
    bad.carrier.period = 2.5e-5;  // 2.5 steps per period
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = sc;
    bad.sampling.window_len = 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = sc;
    bad.encoding.scale_v = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("network step rejects inconsistent inputs")
{
    const Topology t = island_pair();
    Network net(t, kOmega0);
    PlantState st = net.initial_state();
    CHECK_THROWS_AS(net.step(st, {cplx{1.0, 0.0}}, 1e-5), std::invalid_argument);
    const std::vector<cplx> emf{cplx{1.0, 0.0}, cplx{1.0, 0.0}};
    CHECK_THROWS_AS(net.step(st, emf, 2e-5), std::invalid_argument);
    CHECK_NOTHROW(net.step(st, emf, 1e-5));
}

TEST_CASE("symmetric island settles to a balanced operating point")
{
    const Scenario sc = island_scenario();
    RunOptions opt;
    const RunArtifacts art = run_scenario(sc, opt);

    CHECK_FALSE(art.summary.diverged);
    CHECK_FALSE(art.summary.unstable);
    CHECK_FALSE(art.summary.overcurrent);
    CHECK(art.summary.n_events == 0);
    CHECK(art.summary.max_balance_residual < 1e-3);
    CHECK(art.summary.q_sharing_err < 1e-9);  // exact symmetry
    CHECK(art.summary.v_reg_err < 0.02);
    CHECK(art.summary.max_v_mag < 1.1);
    REQUIRE_FALSE(art.rows.empty());
    for (const auto& row : art.rows) {
        for (double w : row.omega) CHECK(std::abs(w - 1.0) < 5e-3);
        CHECK(row.status == 0);
    }
    // Both converters carry about half the load.
    const TraceRow& last = art.rows.back();
    CHECK(last.p[0] == doctest::Approx(last.p[1]).epsilon(1e-9));
    CHECK(last.p[0] > 0.15);
    CHECK(last.p[0] < 0.35);
}

TEST_CASE("load step raises converter power and wakes the gates")
{
    Scenario sc = island_scenario();
    sc.t_end = 0.35;
    sc.schedule.push_back({0.1, DisturbanceKind::LoadStep, 2, 0.9});
    RunOptions opt;
    opt.record_dataset = true;
    const RunArtifacts art = run_scenario(sc, opt);

    CHECK_FALSE(art.summary.diverged);
    CHECK_FALSE(art.summary.unstable);
    CHECK(art.summary.n_events >= 1);
    CHECK(art.summary.forwarded_samples > 0);

    double p_before = 0.0, p_after = 0.0;
    std::size_t nb = 0, na = 0;
    for (const auto& row : art.rows) {
        if (row.t < 0.09) {
            p_before += row.p[0] + row.p[1];
            ++nb;
        } else if (row.t > 0.25) {
            p_after += row.p[0] + row.p[1];
            ++na;
        }
    }
    REQUIRE(nb > 0);
    REQUIRE(na > 0);
    CHECK(p_after / static_cast<double>(na) >
          p_before / static_cast<double>(nb) + 0.1);

    REQUIRE_FALSE(art.dataset.empty());
    for (const auto& batch : art.dataset) {
        CHECK(batch.input.channels() == 6);
        REQUIRE(batch.target.size() == 3);
        CHECK(batch.target[0].size() == batch.input.steps());
        for (const auto& rowt : batch.target)
            for (double v : rowt) CHECK(std::abs(v) <= 1.0 + 1e-12);
    }
    // Gate activity is visible in the trace status flags.
    bool saw_active = false;
    for (const auto& row : art.rows) saw_active |= row.status != 0;
    CHECK(saw_active);
}

TEST_CASE("dc-link rescale alone leaves the closed loop untouched")
{
    // Modulation is commanded as EMF over v_dc, so a v_dc change with the
    // same controller cancels exactly in the applied EMF.
    Scenario plain = island_scenario();
    plain.t_settle = 0.3;
    plain.t_end = 0.2;
    Scenario bumped = plain;
    bumped.schedule.push_back({0.1, DisturbanceKind::ParamMismatch, 0, 3.0});

    const RunArtifacts a = run_scenario(plain, RunOptions{});
    const RunArtifacts b = run_scenario(bumped, RunOptions{});
    REQUIRE(a.rows.size() == b.rows.size());
    CHECK(b.summary.saturation_count == a.summary.saturation_count);
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
        REQUIRE(a.rows[k].t == b.rows[k].t);
        for (std::size_t bi = 0; bi < a.rows[k].v_bus.size(); ++bi)
            REQUIRE(std::abs(a.rows[k].v_bus[bi] - b.rows[k].v_bus[bi]) < 1e-6);
    }
}

TEST_CASE("line outage reroutes power without losing the island")
{
    Scenario sc;
    sc.topology.buses.resize(4);
    sc.topology.buses[0].name = "pcc1";
    sc.topology.buses[1].name = "pcc2";
    sc.topology.buses[2].name = "load1";
    sc.topology.buses[2].g_load = 0.3;
    sc.topology.buses[3].name = "load2";
    sc.topology.buses[3].g_load = 0.3;
    sc.topology.lines.push_back({0, 2, 0.04, 0.12, true});
    sc.topology.lines.push_back({0, 3, 0.04, 0.12, true});
    sc.topology.lines.push_back({1, 3, 0.04, 0.12, true});
    sc.topology.lines.push_back({2, 3, 0.04, 0.12, true});
    Converter c;
    c.bus = 0;
    c.vsg.p_ref = 0.3;
    sc.topology.converters.push_back(c);
    c.bus = 1;
    sc.topology.converters.push_back(c);
    sc.t_settle = 0.6;
    sc.t_end = 0.4;
    sc.schedule.push_back({0.15, DisturbanceKind::LineOutage, 3, 0.0});
    sc.validate();

    const RunArtifacts art = run_scenario(sc, RunOptions{});
    CHECK_FALSE(art.summary.diverged);
    CHECK_FALSE(art.summary.unstable);

    // The trace shows a transient at the switch instant.
    double disturb_peak = 0.0;
    for (const auto& row : art.rows)
        if (row.t > 0.15 && row.t < 0.2)
            for (const cplx& v : row.v_bus)
                disturb_peak = std::max(disturb_peak, std::abs(std::abs(v) - 1.0));
    CHECK(disturb_peak > 1e-4);
}

TEST_CASE("untrained network mode holds the settled point through quiet")
{
    Scenario sc = island_scenario();
    sc.t_settle = 0.5;
    sc.t_end = 0.2;

    SnnConfig cfg;
    cfg.layer_sizes = {6, 128, 128, 3};
    cfg.seed = 7;
    const SnnModel model = SnnModel::build(cfg);

    RunOptions opt;
    opt.controller = Controller::Snn;
    opt.model = &model;
    const RunArtifacts art = run_scenario(sc, opt);

    CHECK_FALSE(art.summary.diverged);
    CHECK_FALSE(art.summary.unstable);
    CHECK(art.summary.n_events == 0);
    CHECK(art.summary.forwarded_samples == 0);
    CHECK(art.summary.hidden_spikes == 0);
    CHECK(art.summary.max_balance_residual < 1e-3);

    REQUIRE_FALSE(art.pwm.empty());
    for (const auto& row : art.pwm)
        for (double d : row.duty) {
            CHECK(d >= 0.0);
            CHECK(d <= 1.0);
        }

    // Idle means zero neuron activity, which prices out to zero idle power.
    REQUIRE_FALSE(art.activity.active.empty());
    for (auto a : art.activity.active) CHECK(a == 0);
    const ActivityReport rep = count_activity(art.activity, Architecture::Snn);
    const PowerEstimate pw = power(rep, EnergyModel{});
    CHECK(pw.p_off_mw == 0.0);
}

TEST_CASE("scenario runner demands a model in network mode")
{
    Scenario sc = island_scenario();
    RunOptions opt;
    opt.controller = Controller::Snn;
    CHECK_THROWS_AS(run_scenario(sc, opt), std::invalid_argument);
}

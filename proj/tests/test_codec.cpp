#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "spikegrid/codec.hpp"

using namespace spikegrid;

namespace {

// Comparator reference: sawtooth evaluated from scratch, strict compare.
// Samples within a relative 1e-9 of a period boundary count as the start of
// the next period (the waveform's definition on a commensurate grid).
double oracle_sawtooth(double t, double period)
{
    double x = t / period - std::floor(t / period);
    if (x > 1.0 - 1e-9 || x < 0.0) x = 0.0;
    return 2.0 * x - 1.0;
}

std::vector<std::vector<double>> random_membranes(std::mt19937_64& rng, std::size_t steps,
                                                  double lo, double hi)
{
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<std::vector<double>> m(3, std::vector<double>(steps));
    for (auto& row : m)
        for (auto& x : row) x = u(rng);
    return m;
}

}  // namespace

TEST_CASE("decoder gates are bit-identical to the comparator reference")
{
    std::mt19937_64 rng(99);
    CarrierSpec spec{2e-4, CarrierShape::RisingSawtooth};
    const double dt = 1e-5;
    std::uniform_int_distribution<std::size_t> len(20, 200);
    std::uniform_int_distribution<std::size_t> off(0, 500);

    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t steps = len(rng);
        const double t0 = static_cast<double>(off(rng)) * dt;
        const auto u = random_membranes(rng, steps, -1.3, 1.3);
        const PwmOutput out = decode(u, spec, dt, t0);
        REQUIRE(out.gates.channels() == 3);
        REQUIRE(out.gates.steps() == steps);
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t m = 0; m < steps; ++m) {
                const double th =
                    oracle_sawtooth(t0 + static_cast<double>(m) * dt, spec.period);
                const bool want = u[ch][m] > th;
                REQUIRE(out.gates.at(ch, m) == want);
            }
    }
}

TEST_CASE("constant membrane duty equals (u+1)/2 within one sample step")
{
    CarrierSpec spec{2e-4, CarrierShape::RisingSawtooth};
    const double dt = 1e-5;
    const std::size_t n = spec.steps_per_period(dt);
    const std::size_t periods = 50;
    for (double uval : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
        std::vector<std::vector<double>> u(3, std::vector<double>(n * periods, uval));
        const PwmOutput out = decode(u, spec, dt, 0.0);
        REQUIRE(out.periods() == periods);
        const double tol = 1.0 / static_cast<double>(n) + 1e-12;
        for (std::size_t p = 0; p < periods; ++p) {
            const double d = out.duty(0, p);
            CHECK(std::abs(d - (uval + 1.0) / 2.0) <= tol);
            // All three channels see the same constant input.
            CHECK(out.duty(1, p) == d);
            CHECK(out.duty(2, p) == d);
        }
    }
}

TEST_CASE("decoder counts out-of-range membranes without altering gates")
{
    CarrierSpec spec{2e-4, CarrierShape::RisingSawtooth};
    std::vector<std::vector<double>> u(3, std::vector<double>(40, 0.0));
    u[0][3] = 1.7;
    u[1][5] = -2.0;
    u[2][7] = 0.99;
    const PwmOutput out = decode(u, spec, 1e-5, 0.0);
    CHECK(out.out_of_range == 2);
    // 1.7 still beats every carrier value.
    CHECK(out.gates.at(0, 3));
    CHECK_FALSE(out.gates.at(1, 5));
}

TEST_CASE("decoder validates channel shape")
{
    CarrierSpec spec{2e-4, CarrierShape::RisingSawtooth};
    std::vector<std::vector<double>> two(2, std::vector<double>(10, 0.0));
    CHECK_THROWS_AS(decode(two, spec, 1e-5, 0.0), std::invalid_argument);
    std::vector<std::vector<double>> ragged(3, std::vector<double>(10, 0.0));
    ragged[2].resize(9);
    CHECK_THROWS_AS(decode(ragged, spec, 1e-5, 0.0), std::invalid_argument);
}

TEST_CASE("duty rejects an out-of-range period index")
{
    CarrierSpec spec{2e-4, CarrierShape::RisingSawtooth};
    std::vector<std::vector<double>> u(3, std::vector<double>(45, 0.3));
    const PwmOutput out = decode(u, spec, 1e-5, 0.0);
    CHECK(out.periods() == 2);  // 45 steps = 2 full periods + leftovers
    CHECK_NOTHROW(out.duty(0, 1));
    CHECK_THROWS_AS(out.duty(0, 2), std::out_of_range);
}

TEST_CASE("rate encoder clamps out-of-range samples and counts them")
{
    CarrierSpec spec{2e-4, CarrierShape::RisingSawtooth};
    const double dt = 1e-5;
    const std::size_t n = spec.steps_per_period(dt);
    std::vector<double> x(n * 10, 1.4);  // clamps to 1.0 each sample
    EncodeStats stats;
    const SpikeTrain tr = rate_encode(x, spec, dt, 0.0, &stats);
    CHECK(stats.clamped == x.size());
    // Clamped to exactly 1.0: beats the sawtooth at every sample.
    CHECK(tr.count(0) == x.size());

    std::vector<double> y(n * 10, -1.2);
    EncodeStats stats2;
    const SpikeTrain tr2 = rate_encode(y, spec, dt, 0.0, &stats2);
    CHECK(stats2.clamped == y.size());
    CHECK(tr2.count(0) == 0);  // -1 never strictly beats the carrier
}

TEST_CASE("rate encoder matches the comparator on in-range data")
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    CarrierSpec spec{2e-4, CarrierShape::RisingSawtooth};
    const double dt = 1e-5;
    std::vector<std::vector<double>> x(4, std::vector<double>(500));
    for (auto& row : x)
        for (auto& v : row) v = u(rng);
    EncodeStats stats;
    const SpikeTrain tr = rate_encode_channels(x, spec, dt, 0.0, &stats);
    CHECK(stats.clamped == 0);
    for (std::size_t ch = 0; ch < 4; ++ch)
        for (std::size_t m = 0; m < 500; ++m) {
            const bool want =
                x[ch][m] > oracle_sawtooth(static_cast<double>(m) * dt, spec.period);
            REQUIRE(tr.at(ch, m) == want);
        }
}

TEST_CASE("rate encoder rejects ragged input")
{
    CarrierSpec spec{2e-4, CarrierShape::RisingSawtooth};
    std::vector<std::vector<double>> x(2, std::vector<double>(10, 0.0));
    x[1].resize(8);
    CHECK_THROWS_AS(rate_encode_channels(x, spec, 1e-5, 0.0), std::invalid_argument);
}

TEST_CASE("spike train counting matches a hand raster")
{
    SpikeTrain tr(2, 6, 1e-5);
    tr.set(0, 1, true);
    tr.set(0, 4, true);
    tr.set(1, 0, true);
    CHECK(tr.count(0) == 2);
    CHECK(tr.count(1) == 1);
    CHECK(tr.total_count() == 3);
    CHECK(tr.count_range(0, 0, 2) == 1);
    CHECK(tr.count_range(0, 2, 4) == 0);
    CHECK(tr.count_range(0, 4, 6) == 1);
    CHECK(tr.horizon() == doctest::Approx(6e-5));
}

TEST_CASE("RLE round-trip preserves every bit and the grid")
{
    std::mt19937_64 rng(21);
    std::bernoulli_distribution coin(0.2);
    SpikeTrain tr(5, 777, 1e-5, 0.125);
    for (std::size_t ch = 0; ch < 5; ++ch)
        for (std::size_t m = 0; m < 777; ++m)
            if (coin(rng)) tr.set(ch, m, true);
    // Degenerate channels stress the run encoding.
    for (std::size_t m = 0; m < 777; ++m) tr.set(3, m, true);
    for (std::size_t m = 0; m < 777; ++m) tr.set(4, m, false);

    const std::string path = "test_rle_tmp.spk";
    tr.save_rle(path, {"a", "b", "c", "full", "empty"});
    const SpikeTrain back = SpikeTrain::load_rle(path);
    CHECK(back.channels() == tr.channels());
    CHECK(back.steps() == tr.steps());
    CHECK(back.dt() == tr.dt());
    CHECK(back.t0() == tr.t0());
    CHECK(back.raw() == tr.raw());
    std::remove(path.c_str());
    std::remove((path + ".json").c_str());
}

TEST_CASE("RLE loader rejects corrupt payloads")
{
    const std::string path = "test_rle_bad.spk";
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("NOPE", f);
    std::fclose(f);
    CHECK_THROWS(SpikeTrain::load_rle(path));
    std::remove(path.c_str());
    CHECK_THROWS(SpikeTrain::load_rle("does_not_exist.spk"));
}

TEST_CASE("spike train rejects a non-positive sample period")
{
    CHECK_THROWS_AS(SpikeTrain(1, 10, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(SpikeTrain(1, 10, -1e-5), std::invalid_argument);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dsplat/hashenc.hpp"

#include <cmath>

using namespace dsplat;
using ad::Array;
using ad::Ref;
using ad::Tape;

namespace {

HashColorField unit_field(uint64_t seed, int table_log2 = 16) {
    Rng rng(seed);
    HashColorField field;
    field.init(Vec3::Zero(), Vec3::Ones(), table_log2, rng);
    return field;
}

} // namespace

TEST_CASE("level layout spans 16 to 2048 with dense coarse levels") {
    const HashColorField field = unit_field(1, 20);
    REQUIRE(field.levels.size() == HashColorField::kLevels);
    CHECK(field.levels.front().resolution == 16);
    CHECK(field.levels.back().resolution == 2048);
    for (size_t l = 1; l < field.levels.size(); ++l)
        CHECK(field.levels[l].resolution > field.levels[l - 1].resolution);
    CHECK(field.levels.front().dense);
    CHECK_FALSE(field.levels.back().dense);
    for (const HashLevelSpec& lv : field.levels)
        CHECK(lv.entries <= (int64_t(1) << 20));
}

TEST_CASE("a dense grid corner returns the stored entry exactly") {
    HashColorField field = unit_field(2);
    const Vec3 x(3.0 / 16.0, 5.0 / 16.0, 7.0 / 16.0); // exact dyadics
    const int64_t idx = hash_corner_index(field.levels[0], 3, 5, 7);
    const VecX feat = hash_encode(x, field);
    CHECK(feat[0] == field.tables[0].data[idx * 2 + 0]);
    CHECK(feat[1] == field.tables[0].data[idx * 2 + 1]);
}

TEST_CASE("a cell center blends the eight corners equally") {
    HashColorField field = unit_field(3);
    const Vec3 x(3.5 / 16.0, 5.5 / 16.0, 7.5 / 16.0);
    const VecX feat = hash_encode(x, field);
    for (int f = 0; f < 2; ++f) {
        double mean = 0.0;
        for (int corner = 0; corner < 8; ++corner) {
            const int64_t idx = hash_corner_index(
                field.levels[0], 3 + (corner & 1), 5 + ((corner >> 1) & 1),
                7 + ((corner >> 2) & 1));
            mean += field.tables[0].data[idx * 2 + f];
        }
        mean /= 8.0;
        CHECK(feat[f] == doctest::Approx(mean).epsilon(1e-14));
    }
}

TEST_CASE("coarse level matches a dense trilinear oracle") {
    HashColorField field = unit_field(4);
    Rng rng(77);
    const HashLevelSpec& lv = field.levels[0];
    REQUIRE(lv.dense);
    for (int trial = 0; trial < 1000; ++trial) {
        const Vec3 x(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1));
        const VecX feat = hash_encode(x, field);
        for (int f = 0; f < 2; ++f) {
            // Independent trilinear interpolation over the dense grid.
            const double px = x[0] * lv.resolution, py = x[1] * lv.resolution,
                         pz = x[2] * lv.resolution;
            const int64_t cx = std::min<int64_t>(int64_t(px), lv.resolution - 1);
            const int64_t cy = std::min<int64_t>(int64_t(py), lv.resolution - 1);
            const int64_t cz = std::min<int64_t>(int64_t(pz), lv.resolution - 1);
            const double fx = px - double(cx), fy = py - double(cy),
                         fz = pz - double(cz);
            double acc = 0.0;
            for (int c = 0; c < 8; ++c) {
                const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
                const int64_t idx =
                    hash_corner_index(lv, cx + bx, cy + by, cz + bz);
                acc += (bx ? fx : 1 - fx) * (by ? fy : 1 - fy) *
                       (bz ? fz : 1 - fz) * field.tables[0].data[idx * 2 + f];
            }
            CHECK(feat[f] == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("trilinear interpolation is exact on linear functions") {
    HashColorField field = unit_field(5);
    const HashLevelSpec& lv = field.levels[0];
    const Vec3 a(0.3, -0.7, 0.2);
    const double b = 0.05;
    for (int64_t ix = 0; ix <= lv.resolution; ++ix)
        for (int64_t iy = 0; iy <= lv.resolution; ++iy)
            for (int64_t iz = 0; iz <= lv.resolution; ++iz) {
                const int64_t idx = hash_corner_index(lv, ix, iy, iz);
                const Vec3 p(double(ix) / lv.resolution, double(iy) / lv.resolution,
                             double(iz) / lv.resolution);
                field.tables[0].data[idx * 2 + 0] = a.dot(p) + b;
            }
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec3 x(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1));
        const VecX feat = hash_encode(x, field);
        CHECK(std::abs(feat[0] - (a.dot(x) + b)) <= 1e-12);
    }
}

TEST_CASE("out-of-box positions clamp to the boundary") {
    HashColorField field = unit_field(6);
    const VecX inside = hash_encode(Vec3(0.0, 0.5, 1.0), field);
    const VecX outside = hash_encode(Vec3(-3.0, 0.5, 7.0), field);
    for (int64_t i = 0; i < inside.size(); ++i) CHECK(inside[i] == outside[i]);
}

TEST_CASE("batched op matches the per-point lookup") {
    HashColorField field = unit_field(7);
    Rng rng(13);
    const int64_t n = 40;
    Array px = Array::zeros({n}), py = Array::zeros({n}), pz = Array::zeros({n});
    for (int64_t i = 0; i < n; ++i) {
        px.data[i] = rng.uniform(-0.2, 1.2);
        py.data[i] = rng.uniform(-0.2, 1.2);
        pz.data[i] = rng.uniform(-0.2, 1.2);
    }
    Tape t;
    const HashFieldLeaves leaves = make_leaves(t, field);
    std::vector<Ref> inputs = {t.constant(px), t.constant(py), t.constant(pz)};
    for (Ref table : leaves.tables) inputs.push_back(table);
    const Ref feats =
        t.record_custom(std::make_shared<HashEncodeOp>(field), inputs);
    for (int64_t i = 0; i < n; ++i) {
        const VecX expect =
            hash_encode(Vec3(px.data[i], py.data[i], pz.data[i]), field);
        for (int64_t j = 0; j < expect.size(); ++j)
            CHECK(t.value(feats).data[i * expect.size() + j] == expect[j]);
    }
}

TEST_CASE("table gradients scatter additively, collisions included") {
    // Tiny hashed tables force collisions.
    Rng rng(15);
    HashColorField field;
    field.init(Vec3::Zero(), Vec3::Ones(), 4, rng);
    bool any_hashed = false;
    for (const HashLevelSpec& lv : field.levels) any_hashed |= !lv.dense;
    REQUIRE(any_hashed);

    const int64_t n = 6;
    std::vector<Array> points;
    Array px = Array::zeros({n}), py = Array::zeros({n}), pz = Array::zeros({n});
    Rng prng(17);
    for (int64_t i = 0; i < n; ++i) {
        px.data[i] = prng.uniform(0.1, 0.9);
        py.data[i] = prng.uniform(0.1, 0.9);
        pz.data[i] = prng.uniform(0.1, 0.9);
    }
    for (const ad::Array& table : field.tables) points.push_back(table);

    auto f = [&](Tape& t, const std::vector<Ref>& in) {
        std::vector<Ref> inputs = {t.constant(px), t.constant(py), t.constant(pz)};
        for (Ref r : in) inputs.push_back(r);
        const Ref feats =
            t.record_custom(std::make_shared<HashEncodeOp>(field), inputs);
        return ad::sum(t, ad::mul(t, feats, feats));
    };
    const double err = ad::check_gradients_multi(f, points, 1e-5, 8, 7);
    CHECK(err <= 1e-6);
}

TEST_CASE("position gradients match finite differences inside cells") {
    HashColorField field = unit_field(19, 8);
    // Positions chosen away from every level's cell boundaries so the
    // interpolation stays differentiable across the probe step.
    Rng rng(23);
    const int64_t n = 3;
    Array px = Array::zeros({n}), py = Array::zeros({n}), pz = Array::zeros({n});
    const double h = 1e-7;
    auto margin_ok = [&](double v) {
        for (const HashLevelSpec& lv : field.levels) {
            const double pos = v * lv.resolution;
            const double frac = pos - std::floor(pos);
            if (std::min(frac, 1.0 - frac) < 1e-3) return false;
        }
        return true;
    };
    for (int64_t i = 0; i < n; ++i) {
        for (Array* arr : {&px, &py, &pz}) {
            double v = rng.uniform(0.05, 0.95);
            while (!margin_ok(v)) v = rng.uniform(0.05, 0.95);
            arr->data[i] = v;
        }
    }
    auto f = [&](Tape& t, const std::vector<Ref>& in) {
        std::vector<Ref> inputs = {in[0], in[1], in[2]};
        for (const ad::Array& table : field.tables)
            inputs.push_back(t.constant(table));
        const Ref feats =
            t.record_custom(std::make_shared<HashEncodeOp>(field), inputs);
        return ad::sum(t, ad::mul(t, feats, feats));
    };
    const double err = ad::check_gradients_multi(f, {px, py, pz}, h);
    CHECK(err <= 1e-4);
}

TEST_CASE("zero decoder output layer gives mid-gray everywhere") {
    HashColorField field = unit_field(29);
    field.dec_w2.data.setZero();
    field.dec_b2.data.setZero();
    const int64_t n = 5;
    Tape t;
    const HashFieldLeaves leaves = make_leaves(t, field);
    Rng rng(31);
    Array px = Array::zeros({n}), py = Array::zeros({n}), pz = Array::zeros({n});
    for (int64_t i = 0; i < n; ++i) {
        px.data[i] = rng.uniform(0, 1);
        py.data[i] = rng.uniform(0, 1);
        pz.data[i] = rng.uniform(0, 1);
    }
    const Ref color = base_color(t, field, leaves, t.constant(px), t.constant(py),
                                 t.constant(pz));
    for (int64_t i = 0; i < n * 3; ++i)
        CHECK(t.value(color).data[i] == doctest::Approx(0.5));
}

TEST_CASE("base color matches a plain decoder evaluation and stays in (0,1)") {
    HashColorField field = unit_field(37);
    Rng rng(41);
    const int64_t n = 20;
    Array px = Array::zeros({n}), py = Array::zeros({n}), pz = Array::zeros({n});
    for (int64_t i = 0; i < n; ++i) {
        px.data[i] = rng.uniform(-0.5, 1.5);
        py.data[i] = rng.uniform(-0.5, 1.5);
        pz.data[i] = rng.uniform(-0.5, 1.5);
    }
    Tape t;
    const HashFieldLeaves leaves = make_leaves(t, field);
    const Ref color = base_color(t, field, leaves, t.constant(px), t.constant(py),
                                 t.constant(pz));
    auto as_mat = [](const ad::Array& a) {
        return Eigen::Map<const RowMajorMatX>(a.data.data(), a.rows(), a.cols());
    };
    for (int64_t i = 0; i < n; ++i) {
        const VecX feat =
            hash_encode(Vec3(px.data[i], py.data[i], pz.data[i]), field);
        VecX h1 = (feat.transpose() * as_mat(field.dec_w0)).transpose() +
                  as_mat(field.dec_b0).row(0).transpose();
        h1 = h1.cwiseMax(0.0);
        VecX h2 = (h1.transpose() * as_mat(field.dec_w1)).transpose() +
                  as_mat(field.dec_b1).row(0).transpose();
        h2 = h2.cwiseMax(0.0);
        VecX raw = (h2.transpose() * as_mat(field.dec_w2)).transpose() +
                   as_mat(field.dec_b2).row(0).transpose();
        for (int c = 0; c < 3; ++c) {
            const double expect = 1.0 / (1.0 + std::exp(-raw[c]));
            const double got = t.value(color).data[i * 3 + c];
            CHECK(got == doctest::Approx(expect).epsilon(1e-10));
            CHECK(got > 0.0);
            CHECK(got < 1.0);
        }
    }
}

TEST_CASE("baked colors equal the live evaluation bit-exactly") {
    HashColorField field = unit_field(43);
    Rng rng(47);
    const int64_t n = 15;
    MatX positions(n, 3);
    for (int64_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) positions(i, c) = rng.uniform(-0.3, 1.3);
    const RowMajorMatX baked = bake_colors(positions, field);
    REQUIRE(baked.rows() == n);

    Tape t;
    const HashFieldLeaves leaves = make_leaves(t, field);
    Array px = Array::zeros({n}), py = Array::zeros({n}), pz = Array::zeros({n});
    for (int64_t i = 0; i < n; ++i) {
        px.data[i] = positions(i, 0);
        py.data[i] = positions(i, 1);
        pz.data[i] = positions(i, 2);
    }
    const Ref color = base_color(t, field, leaves, t.constant(px), t.constant(py),
                                 t.constant(pz));
    for (int64_t i = 0; i < n * 3; ++i)
        CHECK(baked.data()[i] == t.value(color).data[i]);
}

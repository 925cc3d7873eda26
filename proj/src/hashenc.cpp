#include "dsplat/hashenc.hpp"

#include <cmath>
#include <stdexcept>

namespace dsplat {

using ad::Ref;
using ad::Tape;

void HashColorField::configure(const Vec3& box_min, const Vec3& box_max,
                               int log2_entries) {
    aabb_min = box_min;
    aabb_max = box_max;
    table_log2 = log2_entries;
    const int64_t max_entries = int64_t(1) << log2_entries;

    levels.clear();
    tables.clear();
    const double growth = std::exp((std::log(double(max_resolution)) -
                                    std::log(double(base_resolution))) /
                                   double(kLevels - 1));
    for (int l = 0; l < kLevels; ++l) {
        HashLevelSpec spec;
        spec.resolution = int(std::floor(double(base_resolution) *
                                         std::pow(growth, double(l)) + 0.5));
        const int64_t grid = int64_t(spec.resolution + 1) *
                             (spec.resolution + 1) * (spec.resolution + 1);
        spec.dense = grid <= max_entries;
        spec.entries = spec.dense ? grid : max_entries;
        levels.push_back(spec);
        tables.push_back(ad::Array::zeros({spec.entries, kFeatDim}));
    }
    dec_w0 = ad::Array::zeros({feature_dim(), kDecoderWidth});
    dec_b0 = ad::Array::zeros({1, kDecoderWidth});
    dec_w1 = ad::Array::zeros({kDecoderWidth, kDecoderWidth});
    dec_b1 = ad::Array::zeros({1, kDecoderWidth});
    dec_w2 = ad::Array::zeros({kDecoderWidth, 3});
    dec_b2 = ad::Array::zeros({1, 3});
}

void HashColorField::init(const Vec3& box_min, const Vec3& box_max,
                          int log2_entries, Rng& rng) {
    configure(box_min, box_max, log2_entries);
    for (ad::Array& table : tables)
        for (int64_t i = 0; i < table.size(); ++i)
            table.data[i] = rng.uniform(-1e-4, 1e-4);

    auto linear = [&](int in, int out, ad::Array& weight, ad::Array& bias) {
        weight = ad::Array::zeros({in, out});
        bias = ad::Array::zeros({1, out});
        const double bound = 1.0 / std::sqrt(double(in));
        for (int64_t i = 0; i < weight.size(); ++i)
            weight.data[i] = rng.uniform(-bound, bound);
        for (int64_t i = 0; i < bias.size(); ++i)
            bias.data[i] = rng.uniform(-bound, bound);
    };
    linear(feature_dim(), kDecoderWidth, dec_w0, dec_b0);
    linear(kDecoderWidth, kDecoderWidth, dec_w1, dec_b1);
    linear(kDecoderWidth, 3, dec_w2, dec_b2);
}

std::vector<ad::Array*> HashColorField::params() {
    std::vector<ad::Array*> out;
    for (ad::Array& t : tables) out.push_back(&t);
    for (ad::Array* a : {&dec_w0, &dec_b0, &dec_w1, &dec_b1, &dec_w2, &dec_b2})
        out.push_back(a);
    return out;
}

int64_t HashColorField::table_entry_count() const {
    int64_t n = 0;
    for (const HashLevelSpec& l : levels) n += l.entries;
    return n;
}

int64_t hash_corner_index(const HashLevelSpec& level, int64_t ix, int64_t iy,
                          int64_t iz) {
    if (level.dense) {
        const int64_t stride = level.resolution + 1;
        return (ix * stride + iy) * stride + iz;
    }
    const uint64_t h = uint64_t(ix) ^ (uint64_t(iy) * 2654435761ull) ^
                       (uint64_t(iz) * 805459861ull);
    return int64_t(h % uint64_t(level.entries));
}

namespace {

struct LevelLookup {
    int64_t index[8];
    Scalar weight[8];
    Scalar frac[3];
    bool clamped[3];
    int64_t cell[3];
};

LevelLookup lookup_level(const HashLevelSpec& level, const Vec3& aabb_min,
                         const Vec3& aabb_max, const Vec3& x) {
    LevelLookup out;
    for (int a = 0; a < 3; ++a) {
        const Scalar extent = aabb_max[a] - aabb_min[a];
        Scalar u = (x[a] - aabb_min[a]) / extent;
        out.clamped[a] = (u <= 0.0 || u >= 1.0);
        u = std::min(std::max(u, Scalar(0)), Scalar(1));
        const Scalar pos = u * Scalar(level.resolution);
        int64_t cell = int64_t(std::floor(pos));
        if (cell > level.resolution - 1) cell = level.resolution - 1;
        out.cell[a] = cell;
        out.frac[a] = pos - Scalar(cell);
    }
    for (int corner = 0; corner < 8; ++corner) {
        const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
        out.index[corner] =
            hash_corner_index(level, out.cell[0] + bx, out.cell[1] + by,
                              out.cell[2] + bz);
        out.weight[corner] = (bx ? out.frac[0] : 1.0 - out.frac[0]) *
                             (by ? out.frac[1] : 1.0 - out.frac[1]) *
                             (bz ? out.frac[2] : 1.0 - out.frac[2]);
    }
    return out;
}

} // namespace

VecX hash_encode(const Vec3& x, const HashColorField& field) {
    VecX out(field.feature_dim());
    for (int l = 0; l < HashColorField::kLevels; ++l) {
        const LevelLookup lk =
            lookup_level(field.levels[size_t(l)], field.aabb_min, field.aabb_max, x);
        for (int f = 0; f < HashColorField::kFeatDim; ++f) {
            Scalar acc = 0.0;
            for (int corner = 0; corner < 8; ++corner)
                acc += lk.weight[corner] *
                       field.tables[size_t(l)].data[lk.index[corner] *
                                                        HashColorField::kFeatDim +
                                                    f];
            out[l * HashColorField::kFeatDim + f] = acc;
        }
    }
    return out;
}

HashEncodeOp::HashEncodeOp(const HashColorField& field) : field_(&field) {}

ad::Array HashEncodeOp::forward(const std::vector<const ad::Array*>& inputs) {
    if (inputs.size() != 3 + HashColorField::kLevels)
        throw std::invalid_argument("hash-encode: bad input count");
    n_ = inputs[0]->size();
    if (inputs[1]->size() != n_ || inputs[2]->size() != n_)
        throw std::invalid_argument("hash-encode: position length mismatch");

    const int feat = HashColorField::kFeatDim;
    cache_.resize(size_t(n_) * HashColorField::kLevels);
    ad::Array out = ad::Array::zeros({n_, int64_t(field_->feature_dim())});
    for (int64_t i = 0; i < n_; ++i) {
        const Vec3 x(inputs[0]->data[i], inputs[1]->data[i], inputs[2]->data[i]);
        for (int l = 0; l < HashColorField::kLevels; ++l) {
            const HashLevelSpec& spec = field_->levels[size_t(l)];
            const LevelLookup lk =
                lookup_level(spec, field_->aabb_min, field_->aabb_max, x);
            CornerCache& cc = cache_[size_t(i) * HashColorField::kLevels + size_t(l)];
            for (int c = 0; c < 8; ++c) {
                cc.index[c] = lk.index[c];
                cc.weight[c] = lk.weight[c];
            }
            for (int a = 0; a < 3; ++a) {
                cc.frac[a] = lk.frac[a];
                cc.clamped[a] = lk.clamped[a];
                cc.cell[a] = lk.cell[a];
            }
            const ad::Array& table = *inputs[size_t(3 + l)];
            for (int f = 0; f < feat; ++f) {
                Scalar acc = 0.0;
                for (int c = 0; c < 8; ++c)
                    acc += lk.weight[c] * table.data[lk.index[c] * feat + f];
                out.data[i * field_->feature_dim() + l * feat + f] = acc;
            }
        }
    }
    return out;
}

void HashEncodeOp::backward(const ad::Array& out_adjoint,
                            const std::vector<const ad::Array*>& inputs,
                            const std::vector<ad::Array*>& input_adjoints) {
    const int feat = HashColorField::kFeatDim;
    const int fdim = field_->feature_dim();
    for (int64_t i = 0; i < n_; ++i) {
        Scalar dpos[3] = {0, 0, 0};
        for (int l = 0; l < HashColorField::kLevels; ++l) {
            const HashLevelSpec& spec = field_->levels[size_t(l)];
            const CornerCache& cc =
                cache_[size_t(i) * HashColorField::kLevels + size_t(l)];
            const ad::Array& table = *inputs[size_t(3 + l)];
            ad::Array* table_adj = input_adjoints[size_t(3 + l)];
            for (int f = 0; f < feat; ++f) {
                const Scalar g = out_adjoint.data[i * fdim + l * feat + f];
                if (g == 0.0) continue;
                for (int c = 0; c < 8; ++c) {
                    if (table_adj)
                        table_adj->data[cc.index[c] * feat + f] += g * cc.weight[c];
                    // d weight / d frac_a, then frac -> world position.
                    const Scalar tv = table.data[cc.index[c] * feat + f];
                    const int bits[3] = {c & 1, (c >> 1) & 1, (c >> 2) & 1};
                    for (int a = 0; a < 3; ++a) {
                        if (cc.clamped[a]) continue;
                        Scalar dw = bits[a] ? 1.0 : -1.0;
                        for (int o = 0; o < 3; ++o) {
                            if (o == a) continue;
                            dw *= bits[o] ? cc.frac[o] : 1.0 - cc.frac[o];
                        }
                        const Scalar scale =
                            Scalar(spec.resolution) /
                            (field_->aabb_max[a] - field_->aabb_min[a]);
                        dpos[a] += g * tv * dw * scale;
                    }
                }
            }
        }
        for (int a = 0; a < 3; ++a)
            if (input_adjoints[size_t(a)]) input_adjoints[size_t(a)]->data[i] += dpos[a];
    }
}

HashFieldLeaves make_leaves(Tape& t, const HashColorField& field) {
    HashFieldLeaves l;
    for (const ad::Array& table : field.tables) l.tables.push_back(t.input(table));
    l.dec_w0 = t.input(field.dec_w0);
    l.dec_b0 = t.input(field.dec_b0);
    l.dec_w1 = t.input(field.dec_w1);
    l.dec_b1 = t.input(field.dec_b1);
    l.dec_w2 = t.input(field.dec_w2);
    l.dec_b2 = t.input(field.dec_b2);
    return l;
}

Ref base_color(Tape& t, const HashColorField& field,
               const HashFieldLeaves& leaves, Ref pos_x, Ref pos_y, Ref pos_z) {
    std::vector<Ref> inputs = {pos_x, pos_y, pos_z};
    for (Ref table : leaves.tables) inputs.push_back(table);
    const Ref feats =
        t.record_custom(std::make_shared<HashEncodeOp>(field), std::move(inputs));
    Ref h = ad::relu(t, ad::add(t, ad::matmul(t, feats, leaves.dec_w0), leaves.dec_b0));
    h = ad::relu(t, ad::add(t, ad::matmul(t, h, leaves.dec_w1), leaves.dec_b1));
    const Ref raw = ad::add(t, ad::matmul(t, h, leaves.dec_w2), leaves.dec_b2);
    return ad::sigmoid(t, raw);
}

RowMajorMatX bake_colors(const MatX& positions, const HashColorField& field) {
    const int64_t n = positions.rows();
    Tape t;
    ad::Array px = ad::Array::zeros({n}), py = ad::Array::zeros({n}),
              pz = ad::Array::zeros({n});
    for (int64_t i = 0; i < n; ++i) {
        px.data[i] = positions(i, 0);
        py.data[i] = positions(i, 1);
        pz.data[i] = positions(i, 2);
    }
    const HashFieldLeaves leaves = make_leaves(t, field);
    const Ref color = base_color(t, field, leaves, t.constant(std::move(px)),
                                 t.constant(std::move(py)),
                                 t.constant(std::move(pz)));
    const ad::Array& v = t.value(color);
    RowMajorMatX out(n, 3);
    for (int64_t i = 0; i < n * 3; ++i) out.data()[i] = v.data[i];
    return out;
}

} // namespace dsplat

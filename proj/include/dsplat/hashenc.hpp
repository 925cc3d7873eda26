#pragma once

#include "dsplat/ad.hpp"
#include "dsplat/rng.hpp"
#include "dsplat/types.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace dsplat {

struct HashLevelSpec {
    int resolution = 0;      // cells per axis; corner grid is resolution+1
    bool dense = false;      // direct indexing when the grid fits the table
    int64_t entries = 0;
};

// Multiresolution hash-grid color field with a small ReLU decoder. Positions
// are normalized into the scene box (clamped outside); per level the eight
// cell corners are blended trilinearly and the per-level features are
// concatenated. Fine levels address the table with the spatial hash
// (x*1 ^ y*2654435761 ^ z*805459861 mod entries); coarse levels that fit the
// table index densely to avoid gratuitous collisions.
struct HashColorField {
    static constexpr int kLevels = 16;
    static constexpr int kFeatDim = 2;
    static constexpr int kDecoderWidth = 64;

    int base_resolution = 16;
    int max_resolution = 2048;
    int table_log2 = 20;
    Vec3 aabb_min = Vec3::Zero();
    Vec3 aabb_max = Vec3::Ones();

    std::vector<HashLevelSpec> levels;
    std::vector<ad::Array> tables; // per level: (entries, kFeatDim)
    ad::Array dec_w0, dec_b0, dec_w1, dec_b1, dec_w2, dec_b2;

    // Builds the level layout and zeroed storage; table_log2 bounds every
    // level's table (2^20 matches full-scale runs, smaller keeps toy scenes
    // light).
    void configure(const Vec3& box_min, const Vec3& box_max, int table_log2);
    // configure + random table entries in [-1e-4,1e-4] and decoder weights.
    void init(const Vec3& box_min, const Vec3& box_max, int table_log2,
              Rng& rng);

    int feature_dim() const { return kLevels * kFeatDim; }
    std::vector<ad::Array*> params();
    int64_t table_entry_count() const;
};

int64_t hash_corner_index(const HashLevelSpec& level, int64_t ix, int64_t iy,
                          int64_t iz);

// Reference per-point lookup; `x` is a world position.
VecX hash_encode(const Vec3& x, const HashColorField& field);

// Batched tape lookup. Inputs are the three world-position columns followed
// by the kLevels tables; output is (N, feature_dim). Gradients flow both into
// the tables (scatter-add, collisions accumulate) and into the positions via
// the interpolation weights; coordinates clamped to the box get zero
// positional gradient.
class HashEncodeOp : public ad::CustomOp {
public:
    explicit HashEncodeOp(const HashColorField& field);
    std::string name() const override { return "hash-encode"; }
    ad::Array forward(const std::vector<const ad::Array*>& inputs) override;
    void backward(const ad::Array& out_adjoint,
                  const std::vector<const ad::Array*>& inputs,
                  const std::vector<ad::Array*>& input_adjoints) override;

private:
    struct CornerCache {
        int64_t index[8];
        Scalar weight[8];
        Scalar frac[3];
        bool clamped[3];
        int64_t cell[3];
    };
    const HashColorField* field_; // level specs + box; tables come via inputs
    std::vector<CornerCache> cache_; // n * kLevels
    int64_t n_ = 0;
};

struct HashFieldLeaves {
    std::vector<ad::Ref> tables;
    ad::Ref dec_w0, dec_b0, dec_w1, dec_b1, dec_w2, dec_b2;
};

HashFieldLeaves make_leaves(ad::Tape& t, const HashColorField& field);

// Base color c = sigmoid(decoder(hash_encode(x))), in (0,1)^3.
ad::Ref base_color(ad::Tape& t, const HashColorField& field,
                   const HashFieldLeaves& leaves, ad::Ref pos_x, ad::Ref pos_y,
                   ad::Ref pos_z);

// Precomputes per-point base colors for inference; bit-identical to the live
// tape evaluation at the same positions.
RowMajorMatX bake_colors(const MatX& positions, const HashColorField& field);

} // namespace dsplat

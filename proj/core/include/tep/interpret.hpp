#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tep/fusion.hpp"

namespace tep {

/// Element-wise mean of post-softmax attention weights over one group of
/// observations, indexed [layer * heads + head], each (w, w).
struct AttentionGroup {
    std::string tag;  // "defaulted" or "non-defaulted"
    std::size_t count = 0;
    std::vector<Tensor> maps;
};

struct AttentionMapSet {
    ChannelKind channel = ChannelKind::Fundamental;
    std::size_t layers = 0, heads = 0, window = 0;
    std::size_t horizon = kHorizons - 1;  // label index used for grouping
    std::optional<AttentionGroup> defaulted, non_defaulted;
    std::vector<std::string> warnings;

    const Tensor& map(const AttentionGroup& g, std::size_t layer, std::size_t head) const {
        return g.maps.at(layer * heads + head);
    }
};

/// Eval-mode forward passes over `data`, recording the attention of the TEP
/// model on `channel`, split by the label at `horizon` (default 3y).
AttentionMapSet extract_attention(const Checkpoint& checkpoint, const PreparedSet& data,
                                  ChannelKind channel = ChannelKind::Fundamental, std::size_t horizon = kHorizons - 1);

/// Input position labels "t-11" ... "t".
std::string position_label(std::size_t index, std::size_t window);

/// One CSV per (group, layer, head) named attention_<group>_l<layer>_h<head>.csv
/// and one SVG grid per group (layers as rows, heads as columns). Returns the
/// files written.
std::vector<std::filesystem::path> export_heatmap(const AttentionMapSet& maps, const std::filesystem::path& dir);

Tensor read_heatmap_csv(const std::filesystem::path& path);

/// Input position receiving the most attention summed over output positions;
/// ties go to the earliest.
std::size_t column_mass_argmax(const Tensor& map);

}  // namespace tep

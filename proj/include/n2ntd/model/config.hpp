#pragma once

#include "n2ntd/core/errors.hpp"

#include <vector>

namespace n2ntd::model {

// `paper` feeds the middle frame and only excludes its Bi-ConvLSTM output
// from the time sum; `strict` additionally zeroes the middle-frame input so
// blindness is exact.
enum class BlindMode { paper, strict };

struct ModelConfig {
    int k = 3;                                // frames per side
    int levels = 3;
    std::vector<int> channels = {32, 48, 64}; // per level
    int lstm_hidden_bottleneck = 64;
    int lstm_hidden_tail = 32;
    int kernel_size = 3;
    BlindMode blind_mode = BlindMode::paper;
    int attention_reduction = 8;
};

inline void validate_config(const ModelConfig& c)
{
    if (c.levels != int(c.channels.size()))
        throw Error(Err::ConfigError, "levels must equal len(channels_per_level)");
    if (c.levels != 3)
        throw Error(Err::ConfigError, "this network is defined for 3 levels");
    if (c.kernel_size < 1 || c.kernel_size % 2 == 0)
        throw Error(Err::ConfigError, "kernel size must be odd");
    for (int ch : c.channels)
        if (ch < 1) throw Error(Err::ConfigError, "channel counts must be positive");
    if (c.lstm_hidden_bottleneck < 1 || c.lstm_hidden_tail < 1)
        throw Error(Err::ConfigError, "lstm hidden sizes must be positive");
    if (c.attention_reduction < 1)
        throw Error(Err::ConfigError, "attention reduction must be >= 1");
    if (c.k < 1) throw Error(Err::ConfigError, "k must be >= 1");
}

} // namespace n2ntd::model

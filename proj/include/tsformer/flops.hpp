#pragma once

#include <cstdint>

namespace tsf {

// Multiply-accumulate counters per op category, filled during a forward pass.
// attention_skipped records modulation multiplies avoided by masking, so the
// dense equivalent of the attention category is multiplies + skipped.
struct FlopLedger {
    int64_t conv_macs = 0;
    int64_t fft_butterflies = 0;
    int64_t attention_multiplies = 0;
    int64_t attention_skipped = 0;

    void reset() { *this = FlopLedger{}; }

    FlopLedger& operator+=(const FlopLedger& o) {
        conv_macs += o.conv_macs;
        fft_butterflies += o.fft_butterflies;
        attention_multiplies += o.attention_multiplies;
        attention_skipped += o.attention_skipped;
        return *this;
    }

    int64_t total() const { return conv_macs + fft_butterflies + attention_multiplies; }
};

} // namespace tsf

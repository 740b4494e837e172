#ifndef CFX_TESTS_SUPPORT_HPP
#define CFX_TESTS_SUPPORT_HPP

#include "cfx/synth.hpp"

namespace cfx::testsupport {

// Default generator with boosted base rates so that every treatment level
// has comfortable support in the small samples unit tests use; the default
// rates make rare levels (2-4%) empty too often below a few hundred records.
inline SynthConfig boosted_synth_config(std::size_t n, std::uint64_t seed) {
    SynthConfig c = default_synth_config(n, seed);
    c.treatments[0].cuts = {-1.8, -0.9, 0.0};  // lighting levels ~14/15/21/50%
    c.treatments[1].cuts = {0.5, 1.0};         // control device ~62/11/27%
    c.treatments[2].cuts = {-2.2, -1.4};       // weather ~10/10/80%
    for (std::size_t j = 3; j < c.treatments.size(); ++j)
        c.treatments[j].cuts = {1.386};        // binaries at ~20%
    return c;
}

}  // namespace cfx::testsupport

#endif

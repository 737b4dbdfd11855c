#pragma once

#include <string>

#include "opfmeta/grid.hpp"

namespace fixtures {

inline std::string case_path(const std::string& name)
{
    return std::string(OPFMETA_CASES_DIR) + "/" + name;
}

inline opfmeta::Grid toy2() { return opfmeta::load_case(case_path("toys/toy2_uncongested.m")); }
inline opfmeta::Grid toy3() { return opfmeta::load_case(case_path("toys/toy3_congested.m")); }
inline opfmeta::Grid toy6() { return opfmeta::load_case(case_path("toys/toy6_meshed.m")); }
inline opfmeta::Grid pglib(const std::string& name) { return opfmeta::load_case(case_path("pglib_opf_" + name + ".m")); }

} // namespace fixtures

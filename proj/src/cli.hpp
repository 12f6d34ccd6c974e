#pragma once

namespace hevlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitInfeasible = 3;

int main(int argc, char** argv);

}  // namespace hevlab::cli

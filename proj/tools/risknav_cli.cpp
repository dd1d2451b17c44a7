// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#include <cstdio>

int main() {
  std::puts("risknav: command line interface under construction");
  return 0;
}

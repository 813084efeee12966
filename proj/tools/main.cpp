#include <cstdio>

int main() {
  std::puts("obfrev: CLI not wired up yet");
  return 1;
}

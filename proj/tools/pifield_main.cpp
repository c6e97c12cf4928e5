#include <cstdio>

int main() {
  std::puts("pifield: subcommands not wired yet");
  return 2;
}

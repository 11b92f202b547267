#include <iostream>

int main() {
  std::cout << "styleshift cli placeholder\n";
  return 0;
}

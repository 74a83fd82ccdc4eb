# Testes do needrank

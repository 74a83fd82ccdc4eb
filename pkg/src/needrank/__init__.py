"""
needrank: pós-treinamento por reforço de rankings condicionados a necessidades
sobre um conjunto fechado de candidatos.
"""

__version__ = "1.0.0"

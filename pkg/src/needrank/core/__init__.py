# Core module for needrank

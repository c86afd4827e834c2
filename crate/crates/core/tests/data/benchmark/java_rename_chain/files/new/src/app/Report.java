package app;

import java.io.PrintStream;

public class Report {
    private final Settings settings;
    private final Inventory inventory;

    public Report(Settings settings, Inventory inventory) {
        this.settings = settings;
        this.inventory = inventory;
    }

    public String title() {
        return "Inventory report";
    }

    public String footer() {
        return "-- end of report --";
    }

    public int width() {
        return 80;
    }

    public void print(PrintStream out) {
        out.println(title());
        out.println("items: " + inventory.itemCount());
        out.printf("quantity: %d%n", inventory.totalQuantity());
    }

    public String separator() {
        return "=".repeat(width());
    }

    public boolean verbose() {
        return settings.verbose();
    }

    public String locale() {
        return settings.locale();
    }
}
